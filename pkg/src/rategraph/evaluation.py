"""Evaluation harness for the rating-bound problem.

Classifies test examples by where their true rating sits relative to the
same user's observed neighbor ratings, scores each estimator with RMSE on
the bound-problem classes, reports how much of the total squared error the
bound examples carry, and runs the empirical exam of the vanishing-second-
derivative assumption.
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np

from .data import RatingMatrix, RatingRecord, Split
from .estimators import SolverConfig, predict_hcp, predict_knn, predict_sfr
from .graph import ItemGraph

__all__ = [
    "BoundClass",
    "UnknownItemError",
    "EvaluationReport",
    "Histogram",
    "classify_bound",
    "evaluate",
    "examine_linearity",
]


class UnknownItemError(KeyError):
    """A test record names an item the graph does not contain."""


class BoundClass(enum.Enum):
    HIGHER = "higher"
    LOWER = "lower"
    NEITHER = "neither"
    UNCLASSIFIABLE = "unclassifiable"


def classify_bound(
    test_record: RatingRecord,
    train: RatingMatrix,
    graph: ItemGraph,
) -> BoundClass:
    """Compare a test rating with the user's training ratings on its neighbors.

    Strictly greater than all of them -> HIGHER, strictly less -> LOWER,
    otherwise NEITHER; UNCLASSIFIABLE when the user rated no neighbor of the
    item in training. A pure function of the record, so permuting the test
    set never changes a record's class.
    """
    if test_record.item_id not in graph.item_index:
        raise UnknownItemError(test_record.item_id)
    item = graph.item_index[test_record.item_id]
    neigh, _ = graph.neighbors(item)
    user = train.user_index.get(test_record.user_id)
    if user is None:
        return BoundClass.UNCLASSIFIABLE
    rated = train.user_ratings(user)
    # graph and train keep independent item index spaces; map through names
    neighbor_ratings = []
    for j in neigh:
        ti = train.item_index.get(graph.items[j])
        if ti is not None and ti in rated:
            neighbor_ratings.append(rated[ti])
    if not neighbor_ratings:
        return BoundClass.UNCLASSIFIABLE
    if test_record.rating > max(neighbor_ratings):
        return BoundClass.HIGHER
    if test_record.rating < min(neighbor_ratings):
        return BoundClass.LOWER
    return BoundClass.NEITHER


# -- report -------------------------------------------------------------------


@dataclass
class EvaluationReport:
    """Bound-problem statistics, per-method RMSE, and solver diagnostics.

    ``rmse`` maps method -> {"all", "higher", "lower"} -> value or None when
    the class set is empty; counts accompany every RMSE. Error contribution
    shares are squared-residual fractions of the kNN predictor over all
    classified test examples, so the four classes sum to the total exactly.
    """

    n_test: int
    n_classified: int
    n_unknown_items: int
    class_counts: dict[str, int]
    class_fractions: dict[str, float]
    rmse: dict[str, dict[str, Optional[float]]]
    rmse_counts: dict[str, dict[str, int]]
    error_contribution: Optional[dict[str, float]]
    error_contribution_total: Optional[float]
    fallback_counts: dict[str, int]
    solver_stats: dict[str, dict[str, float]]
    rmse_by_truth: list[dict[str, object]] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "n_test": self.n_test,
            "n_classified": self.n_classified,
            "n_unknown_items": self.n_unknown_items,
            "class_counts": self.class_counts,
            "class_fractions": self.class_fractions,
            "rmse": self.rmse,
            "rmse_counts": self.rmse_counts,
            "error_contribution": self.error_contribution,
            "error_contribution_total": self.error_contribution_total,
            "fallback_counts": self.fallback_counts,
            "solver_stats": self.solver_stats,
            "rmse_by_truth": self.rmse_by_truth,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def rmse_tsv(self) -> str:
        """Flat TSV of per-class RMSE with a truth-rating grouping key."""
        lines = ["method\tbound_class\ttruth_rating\tcount\trmse"]
        for row in self.rmse_by_truth:
            rmse = row["rmse"]
            rendered = "" if rmse is None else repr(rmse)
            lines.append(
                f"{row['method']}\t{row['bound_class']}\t{row['truth_rating']}\t{row['count']}\t{rendered}"
            )
        return "\n".join(lines) + "\n"


def _rmse(residuals: list[float]) -> Optional[float]:
    if not residuals:
        return None
    return float(np.sqrt(np.mean(np.square(residuals))))


@dataclass
class _UserTask:
    user_id: str
    records: list[RatingRecord]
    classes: list[BoundClass]


# Worker context for process pools: populated once before the fork so the
# graph and training data are shared copy-on-write with every worker.
_CTX: dict[str, object] = {}


@dataclass
class _UserResult:
    predictions: dict[str, dict[str, tuple[float, bool]]]
    sfr_diag: Optional[tuple[int, bool, float, int]] = None


def _method_predictions(
    graph: ItemGraph,
    task: _UserTask,
    observed: dict[str, float],
    methods: Sequence[str],
    config: SolverConfig,
    fallback: float,
) -> _UserResult:
    """Per-method {item: (estimate, is_fallback)} for one user.

    kNN covers every test item (its residuals feed the error-contribution
    table); hcp/sfr cover the bound-problem items only, which is what their
    RMSE is reported on. Abstentions fall back to the user's training mean,
    then the global training mean.
    """
    bound_items = {
        rec.item_id
        for rec, cls in zip(task.records, task.classes)
        if cls in (BoundClass.HIGHER, BoundClass.LOWER)
    }
    all_items = {rec.item_id for rec in task.records}
    result = _UserResult(predictions={})
    for method in methods:
        targets = all_items if method == "knn" else bound_items
        if not targets:
            result.predictions[method] = {}
            continue
        if method == "knn":
            rec = predict_knn(graph, observed, targets)
        elif method == "hcp":
            rec = predict_hcp(graph, observed, targets)
        elif method == "sfr":
            rec = predict_sfr(graph, observed, targets, config)
        else:
            raise ValueError(f"unknown method {method!r}")
        got: dict[str, tuple[float, bool]] = {}
        for item in targets:
            if item in rec.estimates:
                got[item] = (rec.estimates[item], False)
            else:
                got[item] = (fallback, True)
        if method == "sfr" and rec.diagnostics is not None:
            d = rec.diagnostics
            result.sfr_diag = (d.iterations_used, d.converged, d.final_objective, d.source_count)
        result.predictions[method] = got
    return result


def _run_user(user_pos: int) -> tuple[int, _UserResult]:
    graph: ItemGraph = _CTX["graph"]  # type: ignore[assignment]
    train: RatingMatrix = _CTX["train"]  # type: ignore[assignment]
    tasks: list[_UserTask] = _CTX["tasks"]  # type: ignore[assignment]
    methods: Sequence[str] = _CTX["methods"]  # type: ignore[assignment]
    config: SolverConfig = _CTX["config"]  # type: ignore[assignment]
    global_mean: float = _CTX["global_mean"]  # type: ignore[assignment]

    task = tasks[user_pos]
    user = train.user_index.get(task.user_id)
    if user is None:
        observed: dict[str, float] = {}
        fallback = global_mean
    else:
        rated = train.user_ratings(user)
        observed = {train.items[i]: r for i, r in rated.items() if train.items[i] in graph.item_index}
        fallback = float(np.mean(list(rated.values()))) if rated else global_mean
    return user_pos, _method_predictions(graph, task, observed, methods, config, fallback)


def evaluate(
    methods: Sequence[str],
    split: Split,
    graph: ItemGraph,
    config: SolverConfig,
    jobs: int = 1,
    predictions_out: Optional[IO[str]] = None,
) -> EvaluationReport:
    """Score estimators on the bound-problem test examples.

    The graph must have been built from ``split.train`` only. Test records
    naming items outside the graph are counted and excluded. Per-user work is
    independent; with ``jobs`` > 1 it fans out over processes, and results
    are aggregated in user order so the report is identical for any ``jobs``.

    When ``predictions_out`` is given, every prediction is dumped as
    ``user,item,estimate,method,is_fallback`` lines.
    """
    for m in methods:
        if m not in ("knn", "hcp", "sfr"):
            raise ValueError(f"unknown method {m!r}")
    config.validate()
    train = split.train

    # classify every test record (pure, order-independent)
    tasks: dict[str, _UserTask] = {}
    n_unknown = 0
    class_counts = {c.value: 0 for c in BoundClass}
    for rec in split.test:
        try:
            cls = classify_bound(rec, train, graph)
        except UnknownItemError:
            n_unknown += 1
            continue
        class_counts[cls.value] += 1
        task = tasks.get(rec.user_id)
        if task is None:
            task = tasks[rec.user_id] = _UserTask(rec.user_id, [], [])
        task.records.append(rec)
        task.classes.append(cls)

    ordered_users = sorted(tasks)
    task_list = [tasks[u] for u in ordered_users]
    n_classified = sum(class_counts.values())
    global_mean = train.global_mean() if train.n_ratings else (sum(train.bounds) / 2.0)

    _CTX.update(
        graph=graph,
        train=train,
        tasks=task_list,
        methods=tuple(methods),
        config=config,
        global_mean=global_mean,
    )
    try:
        if jobs > 1 and len(task_list) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = dict(pool.map(_run_user, range(len(task_list)), chunksize=8))
        else:
            results = dict(map(_run_user, range(len(task_list))))
    finally:
        _CTX.clear()

    # aggregate in fixed user order so output is schedule-independent
    residual_sets: dict[str, dict[str, list[float]]] = {
        m: {"all": [], "higher": [], "lower": []} for m in methods
    }
    by_truth: dict[tuple[str, str, str], list[float]] = {}
    fallback_counts = {m: 0 for m in methods}
    contribution: Optional[dict[str, float]] = None
    knn_sq: dict[str, float] = {c.value: 0.0 for c in BoundClass}
    sfr_iters: list[float] = []
    sfr_objectives: list[float] = []
    sfr_sources: list[float] = []
    sfr_converged = 0
    sfr_users = 0

    for pos in range(len(task_list)):
        task = task_list[pos]
        user_result = results[pos]
        if user_result.sfr_diag is not None:
            iters, conv, objective, n_src = user_result.sfr_diag
            sfr_users += 1
            sfr_iters.append(float(iters))
            sfr_objectives.append(float(objective))
            sfr_sources.append(float(n_src))
            sfr_converged += bool(conv)
        for method in methods:
            got = user_result.predictions[method]
            for rec, cls in zip(task.records, task.classes):
                entry = got.get(rec.item_id)
                if entry is None:
                    continue
                est, is_fb = entry
                residual = est - rec.rating
                if is_fb:
                    fallback_counts[method] += 1
                if method == "knn":
                    knn_sq[cls.value] += residual * residual
                if cls in (BoundClass.HIGHER, BoundClass.LOWER):
                    residual_sets[method]["all"].append(residual)
                    residual_sets[method][cls.value].append(residual)
                    truth_key = format(rec.rating, "g")
                    by_truth.setdefault((method, cls.value, truth_key), []).append(residual)
                    by_truth.setdefault((method, cls.value, "all"), []).append(residual)
                    by_truth.setdefault((method, "all", "all"), []).append(residual)
                if predictions_out is not None:
                    predictions_out.write(
                        f"{task.user_id},{rec.item_id},{est!r},{method},{int(is_fb)}\n"
                    )

    if "knn" in methods:
        total_sq = sum(knn_sq.values())
        contribution = dict(knn_sq)
        contribution["total"] = total_sq

    rmse = {
        m: {k: _rmse(v) for k, v in residual_sets[m].items()} for m in methods
    }
    rmse_counts = {
        m: {k: len(v) for k, v in residual_sets[m].items()} for m in methods
    }
    rmse_by_truth = [
        {
            "method": m,
            "bound_class": cls,
            "truth_rating": truth,
            "count": len(res),
            "rmse": _rmse(res),
        }
        for (m, cls, truth), res in sorted(by_truth.items())
    ]
    solver_stats: dict[str, dict[str, float]] = {}
    if sfr_users:
        solver_stats["sfr"] = {
            "users_solved": float(sfr_users),
            "mean_iterations": float(np.mean(sfr_iters)),
            "mean_final_objective": float(np.mean(sfr_objectives)),
            "mean_source_count": float(np.mean(sfr_sources)),
            "converged_fraction": sfr_converged / sfr_users,
        }

    fractions = {
        c.value: (class_counts[c.value] / n_classified if n_classified else 0.0)
        for c in BoundClass
    }
    return EvaluationReport(
        n_test=len(split.test),
        n_classified=n_classified,
        n_unknown_items=n_unknown,
        class_counts=class_counts,
        class_fractions=fractions,
        rmse=rmse,
        rmse_counts=rmse_counts,
        error_contribution=contribution,
        error_contribution_total=contribution["total"] if contribution else None,
        fallback_counts=fallback_counts,
        solver_stats=solver_stats,
        rmse_by_truth=rmse_by_truth,
    )


# -- linearity exam -------------------------------------------------------------


@dataclass
class Histogram:
    """Fixed-width histogram with overflow bins at both ends.

    Interior bins have width 0.25 and are centered on multiples of 0.25
    across [-4, 4], so the bin containing zero is symmetric around it; the
    two overflow bins absorb anything beyond +-4.125.
    """

    edges: np.ndarray
    counts: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def zero_bin(self) -> int:
        return int(np.searchsorted(self.edges, 0.0))

    def to_tsv(self) -> str:
        lines = ["bin_left\tbin_right\tcount"]
        lefts = np.concatenate(([-np.inf], self.edges))
        rights = np.concatenate((self.edges, [np.inf]))
        for left, right, count in zip(lefts, rights, self.counts):
            lines.append(f"{left:g}\t{right:g}\t{int(count)}")
        return "\n".join(lines) + "\n"


_BIN_WIDTH = 0.25
_BIN_SPAN = 4.0


def examine_linearity(
    ratings: RatingMatrix,
    graph: ItemGraph,
    coverage: float = 0.9,
    min_neighbor_ratings: int = 5,
) -> Histogram:
    """Empirical second-derivative samples where they are directly computable.

    For every (user, item) pair where the user rated the item, rated at
    least ``coverage`` of its neighbors and at least ``min_neighbor_ratings``
    of them, emit the drift: the weighted average of the user's neighbor
    ratings minus the rating itself. If the vanishing-second-derivative
    assumption holds, the samples pile up near zero.
    """
    if not (0 < coverage <= 1):
        raise ValueError("coverage must lie in (0, 1]")
    if min_neighbor_ratings < 1:
        raise ValueError("min_neighbor_ratings must be positive")
    edges = np.arange(-_BIN_SPAN - _BIN_WIDTH / 2, _BIN_SPAN + _BIN_WIDTH, _BIN_WIDTH)
    counts = np.zeros(edges.size + 1, dtype=np.int64)

    w = graph.adjacency
    binary = w.copy()
    binary.data = np.ones_like(binary.data)
    neighbor_count = np.asarray(binary.sum(axis=1)).ravel()

    n = graph.item_count
    for user in range(ratings.n_users):
        rated = ratings.user_ratings(user)
        ind = np.zeros(n)
        vals = np.zeros(n)
        item_ids: list[int] = []
        for item_idx, r in rated.items():
            name = ratings.items[item_idx]
            g = graph.item_index.get(name)
            if g is None:
                continue
            ind[g] = 1.0
            vals[g] = r
            item_ids.append(g)
        if not item_ids:
            continue
        rated_neighbor_cnt = binary @ ind
        weight_sum = w @ ind
        rating_sum = w @ vals
        for g in item_ids:
            m = rated_neighbor_cnt[g]
            total = neighbor_count[g]
            if total == 0 or m < min_neighbor_ratings or m < coverage * total:
                continue
            drift = rating_sum[g] / weight_sum[g] - vals[g]
            counts[np.searchsorted(edges, drift, side="right")] += 1
    return Histogram(edges=edges, counts=counts)
