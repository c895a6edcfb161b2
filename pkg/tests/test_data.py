import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rategraph import (
    RatingMatrix,
    RatingParseError,
    parse_ratings,
    split_ratings,
    second_derivative,
    write_ratings_csv,
    write_test_manifest,
)

ML_LINE = "1::1193::5::978300760\n"


class TestParseMovieLens:
    def test_single_line(self):
        m = parse_ratings(io.StringIO(ML_LINE), "movielens_dat", (1, 5))
        assert m.n_users == 1 and m.n_items == 1 and m.n_ratings == 1
        rec = next(m.records())
        assert rec.user_id == "1" and rec.item_id == "1193" and rec.rating == 5.0

    def test_empty_stream(self):
        m = parse_ratings(io.StringIO(""), "movielens_dat", (1, 5))
        assert (m.n_users, m.n_items, m.n_ratings) == (0, 0, 0)

    def test_out_of_range(self):
        with pytest.raises(RatingParseError, match="line 2"):
            parse_ratings(io.StringIO("1::1::5::0\n1::2::6::0\n"), "movielens_dat", (1, 5))

    def test_malformed_line_number(self):
        stream = io.StringIO("1::1::5::0\n1::2::5::0\ngarbage\n")
        with pytest.raises(RatingParseError, match="line 3"):
            parse_ratings(stream, "movielens_dat", (1, 5))

    def test_duplicate_pair_rejected(self):
        stream = io.StringIO("1::1::5::0\n1::1::4::0\n")
        with pytest.raises(RatingParseError, match="duplicate"):
            parse_ratings(stream, "movielens_dat", (1, 5))

    def test_bad_rating_text(self):
        with pytest.raises(RatingParseError, match="rating"):
            parse_ratings(io.StringIO("1::1::five::0\n"), "movielens_dat", (1, 5))

    def test_ids_are_opaque_strings(self):
        m = parse_ratings(io.StringIO("007::0042::3::0\n"), "movielens_dat", (1, 5))
        assert m.users == ["007"] and m.items == ["0042"]


class TestParseCsv:
    def test_header_and_rows(self):
        text = "user,item,rating,timestamp\na,x,2.5,123\nb,y,4,\n"
        m = parse_ratings(io.StringIO(text), "csv", (1, 5))
        assert m.n_ratings == 2
        assert [r.rating for r in m.records()] == [2.5, 4.0]

    def test_out_of_range_names_line_two(self):
        with pytest.raises(RatingParseError, match="line 2"):
            parse_ratings(io.StringIO("user,item,rating\n1,5,6\n"), "csv", (1, 5))

    def test_bad_header(self):
        with pytest.raises(RatingParseError, match="header"):
            parse_ratings(io.StringIO("a,b,c\n1,2,3\n"), "csv", (1, 5))

    def test_empty_stream(self):
        m = parse_ratings(io.StringIO(""), "csv", (1, 5))
        assert m.n_ratings == 0

    def test_bad_timestamp(self):
        with pytest.raises(RatingParseError, match="timestamp"):
            parse_ratings(io.StringIO("user,item,rating,timestamp\na,x,3,later\n"), "csv", (1, 5))


class TestRoundTrip:
    def test_csv_round_trip_exact(self):
        rng = np.random.default_rng(11)
        m = RatingMatrix((1, 5))
        for k in range(200):
            m.add(f"u{k % 13}", f"i{k % 31}", float(rng.uniform(1, 5)))
        buf = io.StringIO()
        write_ratings_csv(m, buf)
        again = parse_ratings(io.StringIO(buf.getvalue()), "csv", (1, 5))
        assert m.equals(again)

    def test_first_occurrence_indexing_is_stable(self):
        text = "user,item,rating\nb,y,3\na,x,4\nb,x,2\n"
        m1 = parse_ratings(io.StringIO(text), "csv", (1, 5))
        m2 = parse_ratings(io.StringIO(text), "csv", (1, 5))
        assert m1.users == m2.users == ["b", "a"]
        assert m1.items == m2.items == ["y", "x"]


class TestSplit:
    @staticmethod
    def _matrix(n):
        m = RatingMatrix((1, 5))
        for k in range(n):
            m.add(f"u{k}", f"i{k}", 3.0)
        return m

    def test_ten_records_eight_two(self):
        split = split_ratings(self._matrix(10), fraction=0.8, seed=7)
        assert split.train.n_ratings == 8
        assert len(split.test) == 2

    def test_deterministic(self):
        m = self._matrix(50)
        a = split_ratings(m, 0.8, seed=3)
        b = split_ratings(m, 0.8, seed=3)
        assert [r for r in a.test] == [r for r in b.test]
        assert a.train.equals(b.train)

    def test_partition_property(self):
        m = self._matrix(40)
        all_keys = {(r.user_id, r.item_id) for r in m.records()}
        for seed in range(5):
            split = split_ratings(m, 0.7, seed=seed)
            train_keys = {(r.user_id, r.item_id) for r in split.train.records()}
            test_keys = {(r.user_id, r.item_id) for r in split.test}
            assert train_keys | test_keys == all_keys
            assert not (train_keys & test_keys)

    @given(
        n=st.integers(min_value=2, max_value=60),
        fraction=st.floats(min_value=0.05, max_value=0.95),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=40, deadline=None)
    def test_ratio_within_half_point(self, n, fraction, seed):
        split = split_ratings(self._matrix(n), fraction, seed)
        share = len(split.test) / n
        assert abs(share - (1 - fraction)) <= 0.005 + 0.5 / n

    def test_movielens_scale_band(self):
        n = 1_000_209
        m = RatingMatrix((1, 5))
        # one synthetic record per rating, users reused to keep interning cheap
        for k in range(n):
            m.add(f"u{k % 6040}", f"i{k}", 3.0)
        split = split_ratings(m, 0.8, seed=0)
        assert 199_042 <= len(split.test) <= 201_042
        assert split.train.n_ratings + len(split.test) == n

    def test_fraction_validation(self):
        with pytest.raises(ValueError):
            split_ratings(self._matrix(5), 1.0, 0)

    def test_manifest_lines(self):
        split = split_ratings(self._matrix(10), 0.8, seed=7)
        buf = io.StringIO()
        write_test_manifest(split.test, buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 2
        assert all(len(line.split(",")) == 3 for line in lines)


class TestSquareToy:
    def test_structure(self, square):
        assert square.graph.item_count == 4
        assert np.allclose(square.graph.degree, 2.0)
        assert square.observed == {"A": 5.0, "C": 3.0}
        assert square.bounds == (1.0, 9.0)

    def test_connected(self, square):
        assert len(set(square.graph.component_labels())) == 1


class TestLadderToy:
    def test_observed_count(self, ladder):
        assert len(ladder.observed) == 8
        assert ladder.observed == {"v6": 4, "v9": 4, "v11": 5, "v12": 5,
                                   "v15": 6, "v16": 6, "v18": 7, "v21": 7}

    def test_connected(self, ladder):
        assert len(set(ladder.graph.component_labels())) == 1

    def test_ground_truth_second_derivative(self, ladder):
        g = ladder.graph
        truth = np.array([ladder.ground_truth[name] for name in g.items])
        field = second_derivative(g, truth)
        v1, v26 = g.item_index["v1"], g.item_index["v26"]
        assert field.values[v1] == pytest.approx(1.0, abs=1e-12)
        assert field.values[v26] == pytest.approx(-1.0, abs=1e-12)
        interior = [k for k in range(26) if k not in (v1, v26)]
        assert np.max(np.abs(field.values[interior])) < 1e-9
        # exactly two sources
        assert set(field.sources()) == {v1, v26}
