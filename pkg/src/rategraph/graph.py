"""Item-item similarity graph and the discrete second-derivative operator.

The graph is an undirected, positively weighted network whose nodes are
items. Edges come from Pearson correlation between item rating columns,
thresholded strictly from above. On such a graph the discrete second
derivative of a per-item value vector R is

    grad2 R[i] = sum_j w(i,j) R[j] / d(i) - R[i],

i.e. the weighted neighbor average minus the node's own value (the negative
of the random-walk Laplacian applied to R). Items with degree zero carry no
second derivative and are excluded from all solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, TYPE_CHECKING, Iterable, Optional

import numpy as np
from scipy import sparse

if TYPE_CHECKING:  # pragma: no cover
    from .data import RatingMatrix

__all__ = [
    "GraphFormatError",
    "ItemGraph",
    "SecondDerivativeField",
    "pearson_similarity",
    "build_item_graph",
    "second_derivative",
    "serialize_graph",
    "parse_graph",
]

# Edge weights are quantized to this many decimals so that the TSV edge-list
# serialization (which writes 12 decimals) is exactly lossless.
WEIGHT_DECIMALS = 12


class GraphFormatError(ValueError):
    """Malformed or inconsistent serialized graph."""


class ItemGraph:
    """Immutable weighted undirected item network.

    Adjacency is stored in CSR form with sorted neighbor indices, so
    iteration order is deterministic. Construction validates symmetry,
    positive weights and the absence of self-loops; after that the object
    is read-only and safe to share across concurrent solves.
    """

    def __init__(self, items: Iterable[str], matrix: sparse.csr_matrix):
        self.items: tuple[str, ...] = tuple(str(i) for i in items)
        n = len(self.items)
        if matrix.shape != (n, n):
            raise ValueError(f"adjacency shape {matrix.shape} != ({n}, {n})")
        w = matrix.tocsr().astype(np.float64)
        w.sort_indices()
        w.eliminate_zeros()
        self._w = w
        self.item_index: dict[str, int] = {name: k for k, name in enumerate(self.items)}
        if len(self.item_index) != n:
            raise ValueError("duplicate item names")
        self.degree: np.ndarray = np.asarray(w.sum(axis=1)).ravel()
        self.degree.setflags(write=False)
        self._validate()
        # lazy caches (random-walk matrix, transpose, component labels)
        self._p: Optional[sparse.csr_matrix] = None
        self._pt: Optional[sparse.csr_matrix] = None
        self._labels: Optional[np.ndarray] = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_edges(cls, items: Iterable[str], edges: Iterable[tuple[str, str, float]]) -> "ItemGraph":
        """Build from (item_a, item_b, weight) triples, one per undirected edge."""
        items = tuple(str(i) for i in items)
        index = {name: k for k, name in enumerate(items)}
        rows, cols, vals = [], [], []
        seen: set[tuple[int, int]] = set()
        for a, b, w in edges:
            ia, ib = index[str(a)], index[str(b)]
            if ia == ib:
                raise ValueError(f"self-loop on item {a!r}")
            key = (min(ia, ib), max(ia, ib))
            if key in seen:
                raise ValueError(f"duplicate edge {a!r}--{b!r}")
            seen.add(key)
            rows += [ia, ib]
            cols += [ib, ia]
            vals += [float(w), float(w)]
        n = len(items)
        m = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(items, m)

    def _validate(self) -> None:
        if self.item_count == 0:
            return
        coo = self._w.tocoo()
        if np.any(coo.row == coo.col):
            raise ValueError("graph has self-loops")
        if coo.data.size and coo.data.min() <= 0:
            raise ValueError("graph has non-positive edge weights")
        asym = self._w - self._w.T
        if asym.nnz and np.max(np.abs(asym.data)) != 0.0:
            raise ValueError("adjacency is not symmetric")
        resum = np.asarray(self._w.sum(axis=1)).ravel()
        denom = np.maximum(np.abs(self.degree), 1.0)
        if np.max(np.abs(resum - self.degree) / denom) > 1e-12:
            raise ValueError("degree sums inconsistent with stored edges")

    # -- accessors ------------------------------------------------------------

    @property
    def item_count(self) -> int:
        return len(self.items)

    @property
    def edge_count(self) -> int:
        return self._w.nnz // 2

    @property
    def adjacency(self) -> sparse.csr_matrix:
        return self._w

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor indices and weights of node ``i``, sorted by index."""
        lo, hi = self._w.indptr[i], self._w.indptr[i + 1]
        return self._w.indices[lo:hi], self._w.data[lo:hi]

    def edges(self) -> Iterable[tuple[int, int, float]]:
        """Each undirected edge once, as (i, j, w) with i < j, lexicographic."""
        coo = self._w.tocoo()
        for i, j, w in zip(coo.row, coo.col, coo.data):
            if i < j:
                yield int(i), int(j), float(w)

    def random_walk_matrix(self) -> sparse.csr_matrix:
        """D^-1 W with zero rows for degree-0 items (cached)."""
        if self._p is None:
            inv = np.zeros(self.item_count)
            nz = self.degree > 0
            inv[nz] = 1.0 / self.degree[nz]
            p = sparse.diags(inv) @ self._w
            self._p = p.tocsr()
            self._p.sort_indices()
        return self._p

    def random_walk_matrix_t(self) -> sparse.csr_matrix:
        if self._pt is None:
            self._pt = self.random_walk_matrix().T.tocsr()
            self._pt.sort_indices()
        return self._pt

    def component_labels(self) -> np.ndarray:
        """Connected-component label per node (deterministic numbering)."""
        if self._labels is None:
            n_comp, labels = sparse.csgraph.connected_components(
                self._w, directed=False, return_labels=True
            )
            labels = np.asarray(labels)
            labels.setflags(write=False)
            self._labels = labels
        return self._labels

    def structurally_equal(self, other: "ItemGraph") -> bool:
        return (
            self.items == other.items
            and self._w.shape == other._w.shape
            and np.array_equal(self._w.indptr, other._w.indptr)
            and np.array_equal(self._w.indices, other._w.indices)
            and np.array_equal(self._w.data, other._w.data)
        )


@dataclass
class SecondDerivativeField:
    """Per-item second-derivative values; NaN where degree is zero.

    Items whose absolute value exceeds ``source_tolerance`` are the sources
    of the underlying rating function (its local interest centers).
    """

    values: np.ndarray
    defined: np.ndarray
    source_tolerance: float = 1e-3

    def sources(self) -> np.ndarray:
        vals = np.where(self.defined, self.values, 0.0)
        return np.flatnonzero(np.abs(vals) > self.source_tolerance)

    @property
    def source_count(self) -> int:
        return int(self.sources().size)


def pearson_similarity(
    ratings_i: dict[str, float],
    ratings_j: dict[str, float],
    min_support: int = 3,
) -> Optional[float]:
    """Pearson correlation between two items over their co-rating users.

    Returns None when fewer than ``min_support`` users rated both items, or
    when either co-rated sub-vector is constant (the correlation is
    undefined there, which is not the same thing as zero).
    """
    if min_support < 2:
        raise ValueError("min_support must be at least 2")
    shared = ratings_i.keys() & ratings_j.keys()
    n = len(shared)
    if n < min_support:
        return None
    x = np.array([ratings_i[u] for u in sorted(shared)])
    y = np.array([ratings_j[u] for u in sorted(shared)])
    if np.all(x == x[0]) or np.all(y == y[0]):
        return None
    num = n * float(x @ y) - float(x.sum()) * float(y.sum())
    var_x = n * float(x @ x) - float(x.sum()) ** 2
    var_y = n * float(y @ y) - float(y.sum()) ** 2
    if var_x <= 0 or var_y <= 0:
        return None
    r = num / np.sqrt(var_x * var_y)
    return float(min(1.0, max(-1.0, r)))


def build_item_graph(
    train: "RatingMatrix",
    threshold: float,
    min_support: int = 3,
) -> ItemGraph:
    """Thresholded Pearson item network from a training rating matrix.

    An edge (i, j) is present iff the correlation over co-rating users
    exists (>= min_support co-raters, non-constant sub-vectors) and is
    strictly above ``threshold``; its weight is the correlation. Items
    without qualifying edges remain as isolated degree-0 nodes.

    All item pairs are scanned with blocked sparse matrix products; the
    result is identical to calling :func:`pearson_similarity` pairwise.
    """
    if not (0 < threshold < 1):
        raise ValueError("threshold must lie strictly between 0 and 1")
    if min_support < 2:
        raise ValueError("min_support must be at least 2")
    n_items = train.n_items
    x = train.user_item_matrix().tocsc()
    b = x.copy()
    b.data = np.ones_like(b.data)
    x2 = x.copy()
    x2.data = x2.data**2

    xt, bt, x2t = x.T.tocsr(), b.T.tocsr(), x2.T.tocsr()

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    block = max(1, min(512, n_items))
    for lo in range(0, n_items, block):
        hi = min(lo + block, n_items)
        bj = b[:, lo:hi]
        xj = x[:, lo:hi]
        x2j = x2[:, lo:hi]
        n_co = (bt @ bj).toarray()
        s_i = (xt @ bj).toarray()
        s_j = (bt @ xj).toarray()
        q_i = (x2t @ bj).toarray()
        q_j = (bt @ x2j).toarray()
        c_ij = (xt @ xj).toarray()
        with np.errstate(invalid="ignore", divide="ignore"):
            num = n_co * c_ij - s_i * s_j
            var_i = n_co * q_i - s_i**2
            var_j = n_co * q_j - s_j**2
            corr = num / np.sqrt(var_i * var_j)
        ok = (n_co >= min_support) & (var_i > 0) & (var_j > 0)
        ok &= np.isfinite(corr) & (corr > threshold)
        # keep each undirected pair once (global row index < column index)
        gi, gj = np.nonzero(ok)
        keep = gi < (gj + lo)
        gi, gj = gi[keep], gj[keep]
        if gi.size:
            rows.append(gi)
            cols.append(gj + lo)
            vals.append(np.round(corr[gi, gj], WEIGHT_DECIMALS))

    if rows:
        i = np.concatenate(rows)
        j = np.concatenate(cols)
        w = np.concatenate(vals)
    else:
        i = j = np.empty(0, dtype=np.int64)
        w = np.empty(0)
    m = sparse.csr_matrix(
        (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(n_items, n_items),
    )
    return ItemGraph(train.items, m)


def second_derivative(
    graph: ItemGraph,
    values: np.ndarray,
    source_tolerance: float = 1e-3,
) -> SecondDerivativeField:
    """Discrete second derivative of a complete per-item vector.

    ``values`` must hold one finite number per item with positive degree;
    entries at degree-0 items are ignored and come back NaN.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (graph.item_count,):
        raise ValueError("values must have one entry per item")
    defined = graph.degree > 0
    if not np.all(np.isfinite(values[defined])):
        raise ValueError("values contain non-finite entries on connected items")
    safe = np.where(defined, values, 0.0)
    avg = graph.random_walk_matrix() @ safe
    out = np.where(defined, avg - safe, np.nan)
    return SecondDerivativeField(out, defined, source_tolerance)


# -- edge-list TSV serialization ----------------------------------------------
#
# Line format, tab separated:
#   #items<TAB><count>          header: number of nodes
#   #item<TAB><name>            one per node, in index order
#   <item_a><TAB><item_b><TAB><weight>   one per undirected edge, 12 decimals
#
# The node prolog keeps isolated items across round trips; parsers that only
# care about edges can skip the '#' lines.


def serialize_graph(graph: ItemGraph, stream: IO[str]) -> None:
    stream.write(f"#items\t{graph.item_count}\n")
    for name in graph.items:
        stream.write(f"#item\t{name}\n")
    for i, j, w in graph.edges():
        stream.write(f"{graph.items[i]}\t{graph.items[j]}\t{w:.12f}\n")


def parse_graph(stream: IO[str]) -> ItemGraph:
    items: list[str] = []
    edges: list[tuple[str, str, float]] = []
    declared = None
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if parts[0] == "#items":
            if len(parts) != 2 or not parts[1].isdigit():
                raise GraphFormatError(f"line {lineno}: bad #items header")
            declared = int(parts[1])
            continue
        if parts[0] == "#item":
            if len(parts) != 2:
                raise GraphFormatError(f"line {lineno}: bad #item line")
            items.append(parts[1])
            continue
        if parts[0].startswith("#"):
            continue
        if len(parts) != 3:
            raise GraphFormatError(f"line {lineno}: expected 'a<TAB>b<TAB>weight'")
        a, b, raw_w = parts
        try:
            w = float(raw_w)
        except ValueError as exc:
            raise GraphFormatError(f"line {lineno}: bad weight {raw_w!r}") from exc
        edges.append((a, b, w))
    if declared is not None and declared != len(items):
        raise GraphFormatError(f"#items says {declared} but found {len(items)} #item lines")
    if not items:
        # edge-list-only stream: nodes are whatever the edges mention
        names: dict[str, None] = {}
        for a, b, _ in edges:
            names.setdefault(a)
            names.setdefault(b)
        items = list(names)
    known = set(items)
    seen: set[tuple[str, str]] = set()
    for a, b, _ in edges:
        if a not in known or b not in known:
            raise GraphFormatError(f"edge references undeclared item {a!r} or {b!r}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise GraphFormatError(f"duplicate edge {a!r}--{b!r}")
        seen.add(key)
    try:
        return ItemGraph.from_edges(items, edges)
    except ValueError as exc:
        raise GraphFormatError(str(exc)) from exc
