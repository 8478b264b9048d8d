"""Good-Turing style rate estimate and the closed-form quantities behind it.

All functions take ``p``, the vector of per-frame hit probabilities of the
instances, as any array-like of floats in (0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ExSampleError, InvalidArgumentError


class UndefinedBiasError(ExSampleError, ArithmeticError):
    """Relative bias requested where the expected N1 vanishes."""


@dataclass(frozen=True)
class DurationStats:
    mu_p: float
    sigma_p: float
    max_p: float


def _as_p(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidArgumentError("p must be a vector")
    if p.size and not np.all((p > 0) & (p <= 1)):
        raise InvalidArgumentError("p entries must lie in (0, 1]")
    return p


def pow1m(p, k):
    """``(1 - p) ** k`` evaluated as ``exp(k * log1p(-p))``.

    Stays accurate for p ~ 1e-7 and k ~ 1e7. ``k == 0`` gives 1 even for
    p == 1.
    """
    p = np.asarray(p, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp(k * np.log1p(-p))
    return np.where(k == 0, 1.0, out)


def gt_estimate(n1: int, n: int) -> float:
    """Expected new instances in the next frame, estimated as ``n1 / n``."""
    if n < 1:
        raise InvalidArgumentError("gt_estimate needs n >= 1; use the belief prior at n = 0")
    return n1 / n


def pi_first_hit(p_i: float, n: int) -> float:
    """Chance that an instance with hit probability ``p_i`` first shows up on
    sample ``n + 1``: ``p_i * (1 - p_i) ** n``."""
    if not 0 < p_i <= 1:
        raise InvalidArgumentError("p_i must lie in (0, 1]")
    if n < 0:
        raise InvalidArgumentError("n must be nonnegative")
    return float(p_i * pow1m(p_i, n))


def expected_r_next(p, n: int) -> float:
    """E[R(n+1)] = sum_i p_i (1 - p_i)^n."""
    p = _as_p(p)
    if n < 0:
        raise InvalidArgumentError("n must be nonnegative")
    return math.fsum(p * pow1m(p, n))


def conditional_r_next(p, seen) -> float:
    """Expected new instances in the next frame given the set already seen."""
    p = _as_p(p)
    mask = np.ones(p.size, dtype=bool)
    idx = np.fromiter(seen, dtype=np.int64) if not isinstance(seen, np.ndarray) else seen
    if idx.dtype == bool:
        mask &= ~idx
    else:
        if idx.size and (idx.min() < 0 or idx.max() >= p.size):
            raise InvalidArgumentError("seen contains an index outside the instance range")
        mask[idx] = False
    return math.fsum(p[mask])


def _n1_terms(p: np.ndarray, n: int) -> np.ndarray:
    # per-instance P[seen exactly once after n samples]
    return n * p * pow1m(p, n - 1)


def expected_n1(p, n: int) -> float:
    """E[N1(n)] = sum_i n p_i (1 - p_i)^(n-1)."""
    p = _as_p(p)
    if n < 1:
        raise InvalidArgumentError("expected_n1 needs n >= 1")
    return math.fsum(_n1_terms(p, n))


def poisson_lambda(p, n: int) -> float:
    """Parameter of the Poisson law approximating N1(n); equal to E[N1(n)]."""
    return expected_n1(p, n)


def bias_gap_terms(p, n: int) -> np.ndarray:
    """Per-instance terms of E[N1]/n - E[R(n+1)], i.e. p_i^2 (1 - p_i)^(n-1)."""
    p = _as_p(p)
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    return p * p * pow1m(p, n - 1)


def analytic_relative_bias(p, n: int) -> float:
    """Relative overestimate of ``N1/n`` as a predictor of R(n+1), in expectation.

    Equals ``sum p^2 (1-p)^(n-1) / sum p (1-p)^(n-1)``, which lies in
    ``[0, max p]``.
    """
    p = _as_p(p)
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    # the ratio is scale free: weight by (1-p)^(n-1) relative to the largest
    # one so that it survives when every weight underflows
    with np.errstate(divide="ignore"):
        log_w = (n - 1) * np.log1p(-p) if n > 1 else np.zeros_like(p)
    if p.size == 0 or not np.isfinite(log_w).any():
        raise UndefinedBiasError(f"E[N1({n})] vanishes; relative bias is undefined")
    w = np.exp(log_w - log_w.max())
    return math.fsum(p * p * w) / math.fsum(p * w)


def duration_stats(p) -> DurationStats:
    p = _as_p(p)
    if p.size == 0:
        raise InvalidArgumentError("duration_stats needs at least one instance")
    # accumulate relative to the first entry so equal entries are exact
    shift = p[0]
    mu = float(shift + math.fsum(p - shift) / p.size)
    sigma = math.sqrt(math.fsum((p - mu) ** 2) / p.size)
    return DurationStats(mu, sigma, float(p.max()))


def bias_upper_bounds(stats: DurationStats, n_instances: int) -> tuple[float, float]:
    """The two upper bounds on the relative bias: ``max p`` and
    ``sqrt(N) * (mu_p + sigma_p)``."""
    if n_instances < 1:
        raise InvalidArgumentError("n_instances must be >= 1")
    return stats.max_p, math.sqrt(n_instances) * (stats.mu_p + stats.sigma_p)
