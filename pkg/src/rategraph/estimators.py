"""Per-user rating estimators on an item graph.

Four ways to complete a user's rating function from its observed values:

* ``knn``  - weighted average over *observed* neighbors (classic item-based
  collaborative filtering). Locally bounded: an estimate can never leave the
  range of the observed neighbor ratings it averages.
* ``hcp``  - harmonic interpolation: force the second derivative to vanish
  at every unobserved item and solve the linear system. Globally bounded by
  the maximum principle.
* ``sfr``  - scalar function recovery: minimize the l_p norm (p = 1/2) of
  the second derivative over *all* items, pinning observed ratings and
  clamping to the legal rating range. Not bounded by observations, so true
  local extremes can be recovered.
* ``l0_oracle`` - exhaustive minimal-source search, tractable only on small
  graphs; the exact combinatorial problem the l_p objective approximates.

All estimators are pure functions of (graph, observed, config) and abstain
on items they cannot reach (degree-0 items and components containing no
observation); callers decide how to fill abstentions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .graph import ItemGraph, second_derivative

__all__ = [
    "METHODS",
    "ConvergenceError",
    "SolverConfig",
    "SolverDiagnostics",
    "UserRecovery",
    "OracleSolution",
    "OracleResult",
    "predict_knn",
    "predict_hcp",
    "sfr_objective",
    "sfr_gradient",
    "predict_sfr",
    "l0_oracle",
]

METHODS = ("knn", "hcp", "sfr", "l0_oracle")

# harmonic solve internals
_DIRECT_SOLVE_LIMIT = 4096
_RELAX_RESIDUAL = 1e-10
_RELAX_SWEEP_FACTOR = 100
# line search never halves more than this many times per step
_MAX_BACKTRACKS = 60
# continuation starts smoothing at one rating unit and divides by 10 per stage
_EPS_START = 1.0


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its residual target."""


@dataclass
class SolverConfig:
    """Knobs of the sparse-recovery solver; defaults match the experiments."""

    bounds: tuple[float, float]
    p: float = 0.5
    smoothing_eps: float = 1e-6
    max_iterations: int = 10_000
    objective_rel_tol: float = 1e-8
    initial_step: float = 0.1
    backtrack_factor: float = 0.5
    source_tolerance: float = 1e-3
    # extra perturbed warm starts (the objective is nonconvex); 1 = single start
    multi_start: int = 1
    multi_start_seed: int = 0
    multi_start_noise: float = 0.5

    def validate(self) -> None:
        c_l, c_h = self.bounds
        if not c_l < c_h:
            raise ValueError("bounds must satisfy c_l < c_h")
        if not 0 < self.p < 1:
            raise ValueError("p must lie strictly between 0 and 1")
        if self.smoothing_eps <= 0:
            raise ValueError("smoothing_eps must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.objective_rel_tol <= 0:
            raise ValueError("objective_rel_tol must be positive")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie strictly between 0 and 1")
        if self.source_tolerance <= 0:
            raise ValueError("source_tolerance must be positive")
        if self.multi_start < 1:
            raise ValueError("multi_start must be at least 1")


@dataclass
class SolverDiagnostics:
    iterations_used: int
    final_objective: float
    source_count: int
    converged: bool


@dataclass
class UserRecovery:
    """One user's observed constraints plus the recovered estimates.

    ``estimates`` always carries the observed items at their observed values
    exactly (the hard constraint); ``abstentions`` are requested items no
    estimate exists for. Every requested target is in one or the other.
    """

    observed: dict[str, float]
    estimates: dict[str, float]
    abstentions: frozenset[str]
    method: str
    diagnostics: Optional[SolverDiagnostics] = None


# -- shared helpers -------------------------------------------------------------


def _observed_arrays(
    graph: ItemGraph,
    observed: dict[str, float],
    bounds: Optional[tuple[float, float]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    idx = np.empty(len(observed), dtype=np.int64)
    val = np.empty(len(observed))
    for k, (name, rating) in enumerate(sorted(observed.items(), key=lambda kv: graph.item_index.get(kv[0], -1))):
        if name not in graph.item_index:
            raise ValueError(f"observed item {name!r} is not in the graph")
        if not math.isfinite(rating):
            raise ValueError(f"observed rating for {name!r} is not finite")
        if bounds is not None and not (bounds[0] <= rating <= bounds[1]):
            raise ValueError(
                f"observed rating {rating} for {name!r} outside [{bounds[0]}, {bounds[1]}]"
            )
        idx[k] = graph.item_index[name]
        val[k] = float(rating)
    return idx, val


def _target_indices(graph: ItemGraph, targets: Iterable[str]) -> list[str]:
    names = [str(t) for t in targets]
    for t in names:
        if t not in graph.item_index:
            raise ValueError(f"target item {t!r} is not in the graph")
    return names


def _assemble(
    graph: ItemGraph,
    observed: dict[str, float],
    targets: Iterable[str],
    values: np.ndarray,
    solved: np.ndarray,
    method: str,
    diagnostics: Optional[SolverDiagnostics] = None,
) -> UserRecovery:
    estimates: dict[str, float] = dict(observed)
    abstain: set[str] = set()
    for name in _target_indices(graph, targets):
        if name in observed:
            continue
        i = graph.item_index[name]
        if solved[i]:
            estimates[name] = float(values[i])
        else:
            abstain.add(name)
    return UserRecovery(
        observed=dict(observed),
        estimates=estimates,
        abstentions=frozenset(abstain),
        method=method,
        diagnostics=diagnostics,
    )


def _harmonic_extend(
    graph: ItemGraph,
    obs_idx: np.ndarray,
    obs_val: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve grad2 R = 0 on unobserved items, observed entries fixed.

    Returns (values, solved): NaN outside the solved set, which is the
    observed items plus every positive-degree item whose component contains
    at least one observation. Small systems are solved directly (sparse LU);
    larger ones by Jacobi relaxation, i.e. repeatedly replacing each free
    value with its weighted neighbor average, which converges because the
    restricted averaging matrix is substochastic on components touching an
    observation. Non-convergence raises :class:`ConvergenceError`.
    """
    n = graph.item_count
    values = np.full(n, np.nan)
    solved = np.zeros(n, dtype=bool)
    if obs_idx.size == 0:
        return values, solved
    values[obs_idx] = obs_val
    solved[obs_idx] = True

    labels = graph.component_labels()
    obs_mask = np.zeros(n, dtype=bool)
    obs_mask[obs_idx] = True
    comp_observed = np.zeros(int(labels.max()) + 1, dtype=bool)
    comp_observed[labels[obs_idx]] = True
    free = (~obs_mask) & comp_observed[labels] & (graph.degree > 0)
    free_idx = np.flatnonzero(free)
    if free_idx.size:
        p_mat = graph.random_walk_matrix()
        p_rows = p_mat[free_idx]
        p_ff = p_rows[:, free_idx]
        rhs = p_rows[:, obs_idx] @ obs_val
        m = free_idx.size
        if m <= _DIRECT_SOLVE_LIMIT:
            a = sparse.identity(m, format="csc") - p_ff.tocsc()
            x = spla.spsolve(a, rhs)
            x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        else:
            x = np.full(m, float(np.mean(obs_val)))
            cap = _RELAX_SWEEP_FACTOR * m
            for _ in range(cap):
                new = p_ff @ x + rhs
                if np.max(np.abs(new - x)) < _RELAX_RESIDUAL:
                    x = new
                    break
                x = new
            else:
                raise ConvergenceError(
                    f"harmonic relaxation did not reach {_RELAX_RESIDUAL} within {cap} sweeps"
                )
        values[free_idx] = x
        solved[free_idx] = True

        # maximum principle: estimates stay inside the observed range of
        # their component; clip away solver round-off so the property is exact
        n_comp = int(labels.max()) + 1
        comp_min = np.full(n_comp, np.inf)
        comp_max = np.full(n_comp, -np.inf)
        np.minimum.at(comp_min, labels[obs_idx], obs_val)
        np.maximum.at(comp_max, labels[obs_idx], obs_val)
        values[free_idx] = np.clip(
            values[free_idx], comp_min[labels[free_idx]], comp_max[labels[free_idx]]
        )
    return values, solved


# -- kNN and HCP ------------------------------------------------------------------


def predict_knn(
    graph: ItemGraph,
    observed: dict[str, float],
    targets: Iterable[str],
) -> UserRecovery:
    """Weighted average of the user's observed ratings over each target's neighbors.

    Abstains when a target has no observed neighbor (or no neighbors at all).
    """
    obs_idx, obs_val = _observed_arrays(graph, observed)
    n = graph.item_count
    ind = np.zeros(n)
    vals = np.zeros(n)
    ind[obs_idx] = 1.0
    vals[obs_idx] = obs_val
    w = graph.adjacency
    weight_sum = w @ ind
    rating_sum = w @ vals
    solved = weight_sum > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(solved, rating_sum / np.where(solved, weight_sum, 1.0), np.nan)
    return _assemble(graph, observed, targets, est, solved, "knn")


def predict_hcp(
    graph: ItemGraph,
    observed: dict[str, float],
    targets: Iterable[str],
) -> UserRecovery:
    """Harmonic interpolation: grad2 R = 0 at every unobserved item.

    Estimates all unobserved items of a component simultaneously; abstains on
    components with no observation and on degree-0 items.
    """
    obs_idx, obs_val = _observed_arrays(graph, observed)
    values, solved = _harmonic_extend(graph, obs_idx, obs_val)
    return _assemble(graph, observed, targets, values, solved, "hcp")


# -- smoothed l_p objective --------------------------------------------------------
#
# phi(x) = (x^2 + eps^2)^(p/2) - eps^p is the standard smooth surrogate for
# |x|^p: it is zero at zero, tends to |x|^p as eps -> 0, and has derivative
# p*x*(x^2+eps^2)^(p/2-1), which vanishes at 0 instead of diverging like the
# raw |x|^(p-1) would. (The sharper surrogate (sqrt(x^2+eps^2)-eps)^p keeps a
# kink at 0 for p <= 1/2, which freezes descent at any all-flat point.)


def _phi(s: np.ndarray, p: float, eps: float) -> np.ndarray:
    return (s * s + eps * eps) ** (0.5 * p) - eps**p


def _phi_grad(s: np.ndarray, p: float, eps: float) -> np.ndarray:
    return p * s * (s * s + eps * eps) ** (0.5 * p - 1.0)


def sfr_objective(graph: ItemGraph, values: np.ndarray, config: SolverConfig) -> float:
    """Smoothed l_p norm of the second derivative of a complete vector.

    Returns (sum_k phi(grad2 R[k]))^(1/p), phi the smoothed |.|^p above.
    The p-th root is monotone in the sum, so optimization minimizes the sum
    and only reports this norm.
    """
    config.validate()
    f = second_derivative(graph, values, config.source_tolerance)
    s = f.values[f.defined]
    total = float(np.sum(_phi(s, config.p, config.smoothing_eps)))
    return total ** (1.0 / config.p)


def sfr_gradient(
    graph: ItemGraph,
    values: np.ndarray,
    free: Iterable[str],
    config: SolverConfig,
) -> np.ndarray:
    """Analytic gradient of the smoothed objective *sum* w.r.t. free items.

    ``free`` names unobserved items; the result is ordered by ascending item
    index. Gradient of sum_k phi((P R - R)_k) with P = D^-1 W: chain rule
    through M = P - I gives M^T phi'(s) restricted to the free coordinates.
    """
    config.validate()
    free_idx = np.array(
        sorted(graph.item_index[str(name)] for name in free), dtype=np.int64
    )
    f = second_derivative(graph, values, config.source_tolerance)
    u = np.zeros(graph.item_count)
    u[f.defined] = _phi_grad(f.values[f.defined], config.p, config.smoothing_eps)
    g = graph.random_walk_matrix_t() @ u - u
    return g[free_idx]


# -- scalar function recovery ------------------------------------------------------


def _eps_schedule(eps_final: float) -> list[float]:
    if eps_final >= _EPS_START:
        return [eps_final]
    out = []
    eps = _EPS_START
    while eps > eps_final * (1 + 1e-12):
        out.append(eps)
        eps /= 10.0
    out.append(eps_final)
    return out


def _pgd_stage(
    x: np.ndarray,
    free_idx: np.ndarray,
    row_mask: np.ndarray,
    p_mat: sparse.csr_matrix,
    pt_mat: sparse.csr_matrix,
    config: SolverConfig,
    eps: float,
    budget: int,
    rel_tol: float,
) -> tuple[np.ndarray, int, bool]:
    """Projected gradient descent at one smoothing level.

    Each step walks along the analytic gradient with a backtracking line
    search (halving from ``initial_step`` until the objective decreases) and
    clamps the free coordinates to the rating bounds. Stops when the relative
    objective decrease falls under ``rel_tol``, when no step length decreases
    the objective, or when the iteration budget runs out. The objective is
    non-increasing across accepted steps by construction.

    The second derivative is linear in R, so unclipped trial steps reuse one
    matvec per direction: s(t) = s - t * (P d - d). An accepted step is
    recomputed exactly before it replaces the state.
    """
    c_l, c_h = config.bounds
    p = config.p
    n = x.size

    def smoothed_sum(vec: np.ndarray) -> tuple[np.ndarray, float]:
        s = p_mat @ vec - vec
        return s, float(np.sum(_phi(s[row_mask], p, eps)))

    s, obj = smoothed_sum(x)
    iters = 0
    converged = False
    while iters < budget:
        iters += 1
        u = np.zeros(n)
        u[row_mask] = _phi_grad(s[row_mask], p, eps)
        g = (pt_mat @ u - u)[free_idx]
        if not np.any(g):
            converged = True
            break
        delta = np.zeros(n)
        delta[free_idx] = g
        m_delta = p_mat @ delta - delta
        step = config.initial_step
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            raw = x[free_idx] - step * g
            cand_free = np.clip(raw, c_l, c_h)
            clipped = not np.array_equal(raw, cand_free)
            if clipped:
                cand = x.copy()
                cand[free_idx] = cand_free
                s_cand, obj_cand = smoothed_sum(cand)
            else:
                s_cand = s - step * m_delta
                obj_cand = float(np.sum(_phi(s_cand[row_mask], p, eps)))
            if obj_cand < obj:
                if not clipped:
                    cand = x.copy()
                    cand[free_idx] = cand_free
                    s_cand, obj_cand = smoothed_sum(cand)
                    if not obj_cand < obj:
                        step *= config.backtrack_factor
                        continue
                accepted = True
                break
            step *= config.backtrack_factor
        if not accepted:
            converged = True
            break
        drop = obj - obj_cand
        x, s, obj = cand, s_cand, obj_cand
        if drop < rel_tol * max(abs(obj), 1e-300):
            converged = True
            break
    return x, iters, converged


def _recover(
    warm: np.ndarray,
    free_idx: np.ndarray,
    row_mask: np.ndarray,
    graph: ItemGraph,
    config: SolverConfig,
) -> tuple[np.ndarray, int, bool]:
    """Continuation loop: anneal the smoothing from one rating unit down.

    At the target smoothing (default 1e-6) the objective has an extremely
    narrow curvature well around every zero of the second derivative, and the
    all-flat harmonic warm start cannot be escaped by descent. Annealing the
    smoothing keeps early stages soft enough for the gradient to reshape the
    solution and late stages sharp enough to pin the sources.
    """
    p_mat = graph.random_walk_matrix()
    pt_mat = graph.random_walk_matrix_t()
    stages = _eps_schedule(config.smoothing_eps)
    x = warm.copy()
    used = 0
    converged = True
    for si, eps in enumerate(stages):
        remaining = config.max_iterations - used
        if remaining <= 0:
            converged = False
            break
        budget = max(1, remaining // (len(stages) - si))
        x, iters, converged = _pgd_stage(
            x, free_idx, row_mask, p_mat, pt_mat, config, eps, budget,
            config.objective_rel_tol,
        )
        used += iters
    return x, used, converged


def predict_sfr(
    graph: ItemGraph,
    observed: dict[str, float],
    targets: Iterable[str],
    config: SolverConfig,
) -> UserRecovery:
    """Scalar function recovery: minimize the smoothed l_p norm of grad2 R.

    Starts from the harmonic solution, descends with projected gradient
    steps (observed entries never move, free entries clamped to the rating
    bounds after every step), and anneals the smoothing from one rating unit
    down to ``config.smoothing_eps``. If descent somehow ends worse than the
    warm start at the target smoothing, the warm start is returned, so the
    result never loses to harmonic interpolation on the final objective.
    Abstention rules are identical to :func:`predict_hcp`.
    """
    config.validate()
    obs_idx, obs_val = _observed_arrays(graph, observed, config.bounds)
    warm_nan, solved = _harmonic_extend(graph, obs_idx, obs_val)
    obs_mask = np.zeros(graph.item_count, dtype=bool)
    obs_mask[obs_idx] = True
    free_idx = np.flatnonzero(solved & ~obs_mask & (graph.degree > 0))
    row_mask = solved & (graph.degree > 0)
    warm = np.where(solved, warm_nan, 0.0)

    def final_objective(vec: np.ndarray) -> float:
        s = graph.random_walk_matrix() @ vec - vec
        return float(np.sum(_phi(s[row_mask], config.p, config.smoothing_eps)))

    best = warm
    best_obj = final_objective(warm)
    iterations = 0
    converged = True
    if free_idx.size:
        starts: list[np.ndarray] = [warm]
        if config.multi_start > 1:
            rng = np.random.Generator(np.random.PCG64(config.multi_start_seed))
            for _ in range(config.multi_start - 1):
                perturbed = warm.copy()
                noise = rng.uniform(
                    -config.multi_start_noise, config.multi_start_noise, free_idx.size
                )
                perturbed[free_idx] = np.clip(
                    perturbed[free_idx] + noise, config.bounds[0], config.bounds[1]
                )
                starts.append(perturbed)
        for start in starts:
            x, used, conv = _recover(start, free_idx, row_mask, graph, config)
            obj = final_objective(x)
            if obj < best_obj:
                best, best_obj, iterations, converged = x, obj, used, conv
            elif start is starts[0]:
                iterations, converged = used, conv

    values = np.where(solved, best, np.nan)
    unsmoothed = second_derivative(graph, np.where(row_mask, best, 0.0), config.source_tolerance)
    masked = np.where(row_mask, unsmoothed.values, 0.0)
    source_count = int(np.sum(np.abs(np.nan_to_num(masked)) > config.source_tolerance))
    diag = SolverDiagnostics(
        iterations_used=iterations,
        final_objective=best_obj ** (1.0 / config.p),
        source_count=source_count,
        converged=converged,
    )
    return _assemble(graph, observed, targets, values, solved, "sfr", diag)


# -- exhaustive minimal-source oracle ----------------------------------------------


@dataclass(frozen=True)
class OracleSolution:
    sources: frozenset[str]
    values: dict[str, float]
    residual: float


@dataclass(frozen=True)
class OracleResult:
    """All feasible completions at the smallest feasible source count.

    ``min_source_count`` is None when nothing feasible exists up to the
    requested cardinality (that outcome is reported, not raised).
    """

    min_source_count: Optional[int]
    solutions: list[OracleSolution] = field(default_factory=list)


def l0_oracle(
    graph: ItemGraph,
    observed: dict[str, float],
    bounds: tuple[float, float],
    max_sources: int,
    residual_tol: float = 1e-8,
) -> OracleResult:
    """Exhaustively solve the exact minimal-source problem on a small graph.

    For k = 0, 1, ..., ``max_sources`` and every k-subset S of candidate
    items, solve the linear system {grad2 R(i) = 0 for i not in S} with the
    observed ratings pinned, in the least-squares sense; a candidate is
    feasible when the residual stays under ``residual_tol`` and every value
    lies within ``bounds`` (up to 1e-9 slack for solver round-off). Returns
    the first k admitting a feasible solution together with *all* feasible
    solutions at that k; ties are not broken.

    Candidates are the positive-degree items of components containing at
    least one observation (both observed and unobserved items may serve as
    sources). Refuses graphs where the subset enumeration would exceed 10^6
    candidates.
    """
    if max_sources < 0:
        raise ValueError("max_sources must be non-negative")
    obs_idx, obs_val = _observed_arrays(graph, observed, bounds)
    labels = graph.component_labels()
    n = graph.item_count
    obs_mask = np.zeros(n, dtype=bool)
    obs_mask[obs_idx] = True
    comp_observed = np.zeros(int(labels.max()) + 1 if n else 1, dtype=bool)
    if obs_idx.size:
        comp_observed[labels[obs_idx]] = True
    active = comp_observed[labels] & (graph.degree > 0)
    candidates = np.flatnonzero(active)
    total = sum(math.comb(candidates.size, k) for k in range(max_sources + 1))
    if total > 1_000_000:
        raise ValueError(
            f"{total} candidate source sets exceed the 10^6 enumeration guard"
        )

    free_idx = np.flatnonzero(active & ~obs_mask)
    eq_rows = candidates  # second derivative is defined exactly on active rows
    m_dense = graph.random_walk_matrix().toarray() - np.eye(n)
    a_full = m_dense[np.ix_(eq_rows, free_idx)]
    rhs_full = -m_dense[np.ix_(eq_rows, obs_idx)] @ obs_val
    row_pos = {int(r): k for k, r in enumerate(eq_rows)}
    c_l, c_h = bounds
    slack = 1e-9

    for k in range(max_sources + 1):
        found: list[OracleSolution] = []
        for subset in combinations(range(candidates.size), k):
            keep = np.ones(eq_rows.size, dtype=bool)
            for s in subset:
                keep[row_pos[int(candidates[s])]] = False
            a = a_full[keep]
            rhs = rhs_full[keep]
            if free_idx.size:
                x, *_ = np.linalg.lstsq(a, rhs, rcond=None)
                residual = float(np.linalg.norm(a @ x - rhs))
            else:
                x = np.empty(0)
                residual = float(np.linalg.norm(rhs))
            if residual >= residual_tol:
                continue
            if x.size and (x.min() < c_l - slack or x.max() > c_h + slack):
                continue
            vec = {graph.items[i]: float(v) for i, v in zip(obs_idx, obs_val)}
            vec.update(
                {graph.items[i]: float(np.clip(v, c_l, c_h)) for i, v in zip(free_idx, x)}
            )
            srcs = frozenset(graph.items[int(candidates[s])] for s in subset)
            found.append(OracleSolution(sources=srcs, values=vec, residual=residual))
        if found:
            return OracleResult(min_source_count=k, solutions=found)
    return OracleResult(min_source_count=None, solutions=[])
