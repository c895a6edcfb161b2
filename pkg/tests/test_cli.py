import json
import re

import numpy as np
import pytest

from rategraph.cli import ExperimentConfig, main
from tests.conftest import random_rating_matrix


@pytest.fixture
def small_dataset(tmp_path):
    """A seeded csv dataset dense enough to grow a non-trivial graph."""
    rng = np.random.default_rng(17)
    matrix = random_rating_matrix(rng, n_users=30, n_items=10, density=0.7)
    path = tmp_path / "ratings.csv"
    lines = ["user,item,rating"]
    for rec in matrix.records():
        lines.append(f"{rec.user_id},{rec.item_id},{rec.rating!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig(dataset="x.csv", threshold=0.3, seed=9, methods="knn")
        path = tmp_path / "exp.cfg"
        cfg.to_file(str(path))
        again = ExperimentConfig.from_file(str(path))
        assert again == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("no_such_knob=1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="no_such_knob"):
            ExperimentConfig.from_file(str(path))

    def test_flag_overrides_config(self, tmp_path, capsys, small_dataset):
        path = tmp_path / "exp.cfg"
        ExperimentConfig(
            dataset=str(small_dataset), format="csv", threshold=0.9,
            output_dir=str(tmp_path / "out"),
        ).to_file(str(path))
        code, _, err = _run(
            capsys, "build-graph", "--config", str(path), "--threshold", "0.2"
        )
        assert code == 0
        # higher edge count than the configured 0.9 threshold would give
        edges = int(re.search(r"edges=(\d+)", err).group(1))
        assert edges > 0


class TestBuildGraph:
    def test_writes_graph_and_stats(self, tmp_path, capsys, small_dataset):
        out = tmp_path / "out"
        code, _, err = _run(
            capsys, "build-graph", "--dataset", str(small_dataset),
            "--format", "csv", "--threshold", "0.2", "--output-dir", str(out),
        )
        assert code == 0
        assert (out / "graph.tsv").exists()
        assert re.search(r"nodes=10 edges=\d+ isolated=\d+", err)

    def test_rerun_is_byte_identical(self, tmp_path, capsys, small_dataset):
        out = tmp_path / "out"
        args = (
            "build-graph", "--dataset", str(small_dataset), "--format", "csv",
            "--threshold", "0.2", "--output-dir", str(out),
        )
        assert _run(capsys, *args)[0] == 0
        first = (out / "graph.tsv").read_bytes()
        assert _run(capsys, *args)[0] == 0
        assert (out / "graph.tsv").read_bytes() == first

    def test_empty_dataset(self, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        empty.write_text("", encoding="utf-8")
        out = tmp_path / "out"
        code, _, err = _run(
            capsys, "build-graph", "--dataset", str(empty), "--format", "csv",
            "--threshold", "0.5", "--output-dir", str(out),
        )
        assert code == 0
        assert "nodes=0 edges=0" in err

    def test_missing_dataset_fails(self, tmp_path, capsys):
        code, _, err = _run(
            capsys, "build-graph", "--dataset", str(tmp_path / "nope.csv"),
            "--format", "csv",
        )
        assert code == 1
        assert "build-graph: error:" in err


class TestEvaluateCommand:
    def test_toy_ladder_sfr_recovers(self, tmp_path, capsys):
        out = tmp_path / "out"
        code, stdout, _ = _run(
            capsys, "evaluate", "--toy", "ladder26", "--output-dir", str(out)
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["rmse"]["sfr"]["all"] == pytest.approx(0.0, abs=5e-3)
        assert (out / "rmse.tsv").exists()
        assert (out / "test_manifest.csv").exists()
        # table shows the three method columns and an All row
        assert "kNN" in stdout and "SFR" in stdout and "All" in stdout

    def test_methods_subset(self, tmp_path, capsys):
        out = tmp_path / "out"
        code, _, _ = _run(
            capsys, "evaluate", "--toy", "ladder26", "--methods", "knn",
            "--output-dir", str(out),
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["rmse"]) == {"knn"}

    def test_dataset_evaluation_and_determinism(self, tmp_path, capsys, small_dataset):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        base = (
            "evaluate", "--dataset", str(small_dataset), "--format", "csv",
            "--threshold", "0.2", "--seed", "3", "--max-iterations", "300",
        )
        assert _run(capsys, *base, "--output-dir", str(out1))[0] == 0
        assert _run(capsys, *base, "--output-dir", str(out2), "--jobs", "2")[0] == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        assert (out1 / "rmse.tsv").read_bytes() == (out2 / "rmse.tsv").read_bytes()


class TestPredictCommand:
    def test_dump_format(self, tmp_path, capsys, small_dataset):
        out = tmp_path / "out"
        code, _, _ = _run(
            capsys, "predict", "--dataset", str(small_dataset), "--format", "csv",
            "--threshold", "0.2", "--methods", "knn,hcp", "--output-dir", str(out),
        )
        assert code == 0
        lines = (out / "predictions.csv").read_text().splitlines()
        assert lines
        for line in lines:
            user, item, est, method, is_fb = line.split(",")
            float(est)
            assert method in ("knn", "hcp")
            assert is_fb in ("0", "1")


class TestExamineCommand:
    def test_flat_user_single_zero_bin(self, tmp_path, capsys):
        # one user rating everything 3 on a clique-inducing dataset
        path = tmp_path / "flat.csv"
        rows = ["user,item,rating"]
        rng = np.random.default_rng(5)
        # six items co-rated by many users with correlated noise so the
        # graph is complete, plus the flat user
        base = rng.uniform(1, 5, 40)
        for i in range(6):
            for u in range(40):
                val = float(np.clip(round(base[u] + 0.3 * rng.uniform(-1, 1), 2), 1, 5))
                rows.append(f"u{u},m{i},{val}")
        for i in range(6):
            rows.append(f"flat,m{i},3.0")
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        out = tmp_path / "out"
        code, stdout, _ = _run(
            capsys, "examine", "--dataset", str(path), "--format", "csv",
            "--threshold", "0.2", "--output-dir", str(out),
        )
        assert code == 0
        assert re.search(r"samples=\d+", stdout)
        tsv = (out / "second_derivative_hist.tsv").read_text().splitlines()
        assert tsv[0] == "bin_left\tbin_right\tcount"

    def test_empty_qualifying_set(self, tmp_path, capsys):
        path = tmp_path / "tiny.csv"
        path.write_text("user,item,rating\nu,x,3\nu,y,3\n", encoding="utf-8")
        out = tmp_path / "out"
        code, stdout, _ = _run(
            capsys, "examine", "--dataset", str(path), "--format", "csv",
            "--threshold", "0.5", "--output-dir", str(out),
        )
        assert code == 0
        assert "samples=0" in stdout


class TestToyCommand:
    def test_square_knn(self, capsys):
        code, stdout, _ = _run(capsys, "toy", "square", "knn")
        assert code == 0
        rows = {line.split()[0]: line.split() for line in stdout.splitlines()[1:] if line and not line.startswith("abstained")}
        assert rows["B"][3] == "5.00"
        assert rows["D"][3] == "3.00"

    def test_ladder_hcp_endpoints(self, capsys):
        code, stdout, _ = _run(capsys, "toy", "ladder26", "hcp")
        assert code == 0
        rows = {line.split()[0]: line.split() for line in stdout.splitlines()[1:] if line}
        assert float(rows["v1"][3]) == pytest.approx(4.4, abs=0.05)
        assert float(rows["v26"][3]) == pytest.approx(6.6, abs=0.05)

    def test_ladder_sfr_recovers_with_source_flags(self, capsys, ladder):
        code, stdout, _ = _run(capsys, "toy", "ladder26", "sfr")
        assert code == 0
        flagged = set()
        lines = stdout.splitlines()[1:]
        for line in lines:
            parts = line.split()
            if not parts or parts[0] == "abstained:":
                continue
            name = parts[0]
            est = float(parts[3]) if parts[3] != "?" else None
            if name in ladder.ground_truth and name not in ladder.observed:
                assert est == pytest.approx(ladder.ground_truth[name], abs=0.005), name
            if parts[-1] == "*":
                flagged.add(name)
        assert flagged == {"v1", "v26"}

    def test_unknown_toy_errors(self, capsys):
        code, _, err = _run(capsys, "evaluate", "--toy", "pyramid")
        assert code == 1
        assert "error" in err
