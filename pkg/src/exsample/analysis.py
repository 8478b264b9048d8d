"""Analytic oracles and experiment metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InvalidArgumentError
from .estimator import pow1m
from .simulation import PMatrix


def expected_random_curve(p, n):
    """Expected distinct instances after ``n`` uniform samples drawn with
    replacement: ``N - sum (1 - p_i)^n``. ``n`` may be an array."""
    p = np.asarray(p, dtype=np.float64)
    ns = np.asarray(n, dtype=np.float64)
    if np.any(ns < 0):
        raise InvalidArgumentError("n must be nonnegative")
    out = np.array([p.size - math.fsum(pow1m(p, k)) for k in ns.ravel()]).reshape(ns.shape)
    return float(out) if out.ndim == 0 else out


def _check_simplex(w: np.ndarray, m: int) -> None:
    if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError("w must be a probability vector over the chunks")


def allocation_objective(P: PMatrix, w, n: int) -> float:
    """sum_i (1 - p_i . w)^n, the expected number of instances still unseen."""
    q = np.clip(P.matrix @ np.asarray(w, dtype=np.float64), 0.0, 1.0)
    return math.fsum(pow1m(q, n))


def allocation_gradient(P: PMatrix, w, n: int) -> np.ndarray:
    q = np.clip(P.matrix @ np.asarray(w, dtype=np.float64), 0.0, 1.0)
    return -n * (P.matrix.T @ pow1m(q, n - 1))


def expected_weighted_curve(P: PMatrix, w, n):
    """Expected distinct instances after ``n`` samples drawn with chunk
    probabilities ``w``."""
    w = np.asarray(w, dtype=np.float64)
    _check_simplex(w, P.shape[1])
    ns = np.atleast_1d(np.asarray(n))
    out = np.array([P.shape[0] - allocation_objective(P, w, int(k)) for k in ns])
    return float(out[0]) if np.ndim(n) == 0 else out


@dataclass(frozen=True)
class AllocationProblem:
    P: PMatrix
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError("horizon must be >= 1")


@dataclass(frozen=True)
class AllocationSolution:
    w: np.ndarray
    expected_found: float
    iterations: int
    final_gap: float
    converged: bool
    step: float = 1.0


def _fw_line_search(mat, mat_csc, w: np.ndarray, j: int, n: int, iters: int = 60) -> float:
    """argmin over gamma in [0, 1] of the objective on the segment from ``w``
    to vertex ``j``: safeguarded Newton on the (monotone) derivative."""
    q = np.clip(mat @ w, 0.0, 1.0)
    col = np.zeros_like(q)
    a, b = mat_csc.indptr[j], mat_csc.indptr[j + 1]
    col[mat_csc.indices[a:b]] = mat_csc.data[a:b]
    dq = col - q
    keep = dq != 0.0
    q, dq = q[keep], dq[keep]

    def derivs(gamma):
        miss = np.clip(1.0 - q - gamma * dq, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lm = np.log(miss)
            d1 = np.exp((n - 1) * lm) if n > 1 else np.ones_like(miss)
            d2 = np.exp((n - 2) * lm) if n > 2 else np.full_like(miss, float(n > 1))
        return -n * float(dq @ d1), n * (n - 1) * float((dq * dq) @ d2)

    if derivs(0.0)[0] >= 0.0:
        return 0.0
    if derivs(1.0)[0] <= 0.0:
        return 1.0
    lo, hi, x = 0.0, 1.0, 0.5
    for _ in range(iters):
        s1, s2 = derivs(x)
        if s1 < 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 1e-12:
            break
        nxt = x - s1 / s2 if s2 > 0.0 else -1.0
        nxt = nxt if lo < nxt < hi else 0.5 * (lo + hi)
        if abs(nxt - x) <= 1e-15:
            break
        x = nxt
    return x


def optimal_allocation(
    problem: AllocationProblem,
    tol: float = 1e-6,
    max_iter: int = 50_000,
    w0=None,
    step0: float | None = None,
    abs_floor: float = 1.0,
) -> AllocationSolution:
    """Best chunk weights for ``problem.n`` weighted samples.

    Exponentiated-gradient descent with a backtracked step on the
    objective ``sum_i (1 - p_i . w)^n``, interleaved with a line-searched
    Frank-Wolfe step toward the steepest vertex while far from converged.
    Stops when the Frank-Wolfe gap
    ``grad.w - min_j grad_j`` drops below ``tol * max(objective, abs_floor)``;
    otherwise returns the last iterate after ``max_iter`` steps with
    ``converged=False``.
    """
    P, n = problem.P, problem.n
    n_inst, m = P.shape
    w = np.full(m, 1.0 / m) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    _check_simplex(w, m)
    if n_inst == 0:
        return AllocationSolution(w, 0.0, 0, 0.0, True)
    # keep every chunk reachable from a warm start
    if np.any(w < 1e-300):
        w = np.maximum(w, 1e-300)
        w /= w.sum()
    mat, mat_t, mat_csc = P.matrix, P.matrix.T.tocsr(), P.matrix.tocsc()

    def evaluate(v):
        with np.errstate(divide="ignore", invalid="ignore"):
            log_miss = np.log1p(-np.clip(mat @ v, 0.0, 1.0))
            terms = np.exp(n * log_miss)
            inner = np.exp((n - 1) * log_miss) if n > 1 else np.ones_like(log_miss)
        return math.fsum(terms), -n * (mat_t @ inner)

    f, g = evaluate(w)
    step = step0 if step0 else 1.0 / max(np.abs(g).max(), 1e-300)
    gap = float(g @ w - g.min())
    it = 0
    while it < max_iter and gap > tol * max(f, abs_floor):
        it += 1
        while step > 1e-300:
            w_new = w * np.exp(-step * (g - g.min()))
            w_new = np.maximum(w_new / w_new.sum(), 1e-300)
            f_new, g_new = evaluate(w_new)
            kl = float(np.sum(w_new * (np.log(w_new) - np.log(w))))
            if f_new <= f and f_new <= f + float(g @ (w_new - w)) + kl / step:
                break
            step *= 0.5
        else:
            break  # no descent step left at machine precision
        w, f, g = w_new, f_new, g_new
        step *= 2.0
        gap = float(g @ w - g.min())
        if gap > tol * max(f, abs_floor):
            # a vanished chunk that should come back grows only by
            # exp(step * gap) per multiplicative update; a line-searched
            # Frank-Wolfe step moves mass to it directly
            j = int(np.argmin(g))
            gamma = _fw_line_search(mat, mat_csc, w, j, n)
            if gamma > 0.0:
                w_fw = (1.0 - gamma) * w
                w_fw[j] += gamma
                w_fw = np.maximum(w_fw / w_fw.sum(), 1e-300)
                f_fw, g_fw = evaluate(w_fw)
                if f_fw <= f:
                    w, f, g = w_fw, f_fw, g_fw
                    gap = float(g @ w - g.min())
    w_out = np.where(w <= 1e-300, 0.0, w)
    w_out /= w_out.sum()
    f_out = evaluate(w_out)[0]
    if f_out > f:  # dropping the floor values must not undo descent
        w_out, f_out = w / w.sum(), evaluate(w / w.sum())[0]
    return AllocationSolution(w_out, n_inst - f_out, it, gap, gap <= tol * max(f, abs_floor), step)


def optimal_curve(P: PMatrix, horizons, tol: float = 1e-6, max_iter: int = 50_000) -> list[AllocationSolution]:
    """Solve a sequence of horizons in increasing order, warm-starting each
    from the previous solution.

    The warm start is blended with the uniform allocation: chunks driven to
    ~zero weight at a short horizon can matter at a longer one, and
    multiplicative updates revive a vanished weight only very slowly.
    """
    out, w, step = [], None, None
    order = np.argsort(horizons, kind="stable")
    sols: dict[int, AllocationSolution] = {}
    for idx in order:
        sol = optimal_allocation(AllocationProblem(P, int(horizons[idx])), tol, max_iter, w, step)
        sols[int(idx)] = sol
        m = sol.w.size
        # a solve that ran out of descent ends with a collapsed step; only a
        # converged one says something useful about the next horizon's scale
        w, step = 0.5 * sol.w + 0.5 / m, (sol.step if sol.converged else None)
    for idx in range(len(horizons)):
        out.append(sols[idx])
    return out


def _recall_target(n_instances: int, r: float) -> int:
    if n_instances <= 0:
        raise InvalidArgumentError("recall needs at least one instance")
    if not 0 < r <= 1:
        raise InvalidArgumentError("recall level must lie in (0, 1]")
    return math.ceil(r * n_instances - 1e-9)


def samples_to_recall(traj, total_instances: int, r: float) -> int | None:
    """Number of samples after which recall ``r`` was first reached, or
    None if the trajectory never got there."""
    k = _recall_target(total_instances, r)
    hit = np.flatnonzero(traj.cumulative() >= k)
    return int(hit[0]) + 1 if hit.size else None


def median_samples_to_recall(trajs, total_instances: int, r: float) -> float | None:
    vals = [samples_to_recall(t, total_instances, r) for t in trajs]
    med = float(np.median([math.inf if v is None else v for v in vals]))
    return None if math.isinf(med) else med


def savings(trajs_a, trajs_b, total_instances: int, r: float) -> float | None:
    """How many times fewer samples method a needs than method b to reach
    recall ``r`` (ratio of medians); None when a median is not reached."""
    if not trajs_a or not trajs_b:
        raise InvalidArgumentError("both trajectory sets must be nonempty")
    ma = median_samples_to_recall(trajs_a, total_instances, r)
    mb = median_samples_to_recall(trajs_b, total_instances, r)
    if ma is None or mb is None:
        return None
    return mb / ma


def checkpoint_grid(max_n: int, points: int = 40) -> np.ndarray:
    """Roughly log-spaced sample counts in ``[1, max_n]``."""
    if max_n < 1:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.rint(np.geomspace(1, max_n, points)).astype(np.int64))


def cumulative_at(traj, ns) -> np.ndarray:
    """Distinct instances found after each sample count in ``ns``."""
    cum = traj.cumulative()
    ns = np.asarray(ns, dtype=np.int64)
    if ns.size and ns.max() > len(cum):
        raise InvalidArgumentError("checkpoint beyond the end of the trajectory")
    return cum[ns - 1] if ns.size else np.zeros(0, dtype=np.int64)


def percentile_bands(trajs, percentiles=(25, 50, 75), ns=None) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise percentiles of the cumulative distinct count.

    Returns ``(ns, bands)`` with ``bands[k]`` the curve for
    ``percentiles[k]``. ``ns`` defaults to every sample count covered by
    all trajectories.
    """
    if not trajs:
        raise InvalidArgumentError("need at least one trajectory")
    if ns is None:
        ns = np.arange(1, min(len(t) for t in trajs) + 1)
    ns = np.asarray(ns, dtype=np.int64)
    curves = np.vstack([cumulative_at(t, ns) for t in trajs])
    return ns, np.percentile(curves, percentiles, axis=0)


def skew_metric(instance_counts_per_chunk, coverage: float = 0.5) -> float:
    """``coverage * M / k`` where k is the fewest chunks holding a
    ``coverage`` share of the instances; about 1 for uniform data."""
    counts = np.asarray(instance_counts_per_chunk, dtype=np.float64)
    if counts.size == 0:
        raise InvalidArgumentError("counts must be nonempty")
    if counts.sum() <= 0:
        raise InvalidArgumentError("counts must have a positive total")
    if not 0 < coverage <= 1:
        raise InvalidArgumentError("coverage must lie in (0, 1]")
    cum = np.cumsum(np.sort(counts)[::-1])
    k = int(np.searchsorted(cum, coverage * cum[-1] - 1e-12)) + 1
    return coverage * counts.size / k
