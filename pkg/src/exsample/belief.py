"""Gamma belief over a chunk's yield of new instances per sample."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import BeliefParams, ChunkStats, InvalidArgumentError, RngStream

_TINY = 1e-300
_EPS = 1e-16


@dataclass(frozen=True)
class GammaBelief:
    """Gamma(shape, rate) with rate parametrisation (mean = shape / rate)."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise InvalidArgumentError("Gamma shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / (self.rate * self.rate)


def belief_from_stats(stats: ChunkStats, params: BeliefParams) -> GammaBelief:
    # n1 can dip below zero under literal second-sighting accounting; the
    # prior offset is the floor for the shape.
    return GammaBelief(max(stats.n1, 0) + params.alpha0, stats.n + params.beta0)


def standard_gamma(shape: float, rng: RngStream) -> float:
    """Gamma(shape, 1) variate by Marsaglia and Tsang's squeeze method.

    Shapes below one are boosted: draw at ``shape + 1`` and multiply by
    ``U ** (1 / shape)``.
    """
    if shape < 1.0:
        g = standard_gamma(shape + 1.0, rng)
        return g * rng.uniform_open() ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        while True:
            x = rng.normal()
            v = 1.0 + c * x
            if v > 0.0:
                break
        v = v * v * v
        u = rng.uniform_open()
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v


def sample_gamma(belief: GammaBelief, rng: RngStream) -> float:
    return standard_gamma(belief.shape, rng) / belief.rate


def regularized_gamma_p(a: float, x: float, lgamma_a: float | None = None) -> float:
    """Regularized lower incomplete gamma P(a, x).

    Series expansion below ``x = a + 1``, Lentz continued fraction for the
    upper tail above it.
    """
    if a <= 0:
        raise InvalidArgumentError("a must be positive")
    if x <= 0.0:
        return 0.0
    if lgamma_a is None:
        lgamma_a = math.lgamma(a)
    log_pref = -x + a * math.log(x) - lgamma_a
    if x < a + 1.0:
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(10_000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        return min(1.0, total * math.exp(log_pref))
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return max(0.0, 1.0 - math.exp(log_pref) * h)


def gamma_cdf(belief: GammaBelief, x: float) -> float:
    return regularized_gamma_p(belief.shape, x * belief.rate)


def standard_gamma_quantile(
    shape: float, q: float, tol: float, lgamma_a: float, ptol: float = 0.0
) -> float:
    """Bisection for the q-quantile of Gamma(shape, 1).

    Stops once the bracket is narrower than ``tol`` and its CDF values are
    within ``ptol`` of each other, or when it reaches the spacing of
    doubles near the upper end.
    """
    lo, hi = 0.0, max(1.0, shape)
    p_lo, p_hi = 0.0, regularized_gamma_p(shape, hi, lgamma_a)
    while p_hi < q:
        lo, p_lo = hi, p_hi
        hi *= 2.0
        p_hi = regularized_gamma_p(shape, hi, lgamma_a)
    for _ in range(2000):
        if hi - lo <= 4e-16 * hi or (hi - lo <= tol and p_hi - p_lo <= ptol):
            break
        mid = 0.5 * (lo + hi)
        p_mid = regularized_gamma_p(shape, mid, lgamma_a)
        if p_mid < q:
            lo, p_lo = mid, p_mid
        else:
            hi, p_hi = mid, p_mid
    return 0.5 * (lo + hi)


def gamma_quantile(belief: GammaBelief, q: float, tol: float = 1e-10, ptol: float = 1e-10) -> float:
    """x with P[X <= x] = q for X ~ belief, to absolute tolerance ``tol`` in
    x and ``ptol`` in probability."""
    if not 0.0 < q < 1.0:
        raise InvalidArgumentError(f"quantile level must lie in (0, 1), got {q}")
    return (
        standard_gamma_quantile(belief.shape, q, tol * belief.rate, math.lgamma(belief.shape), ptol)
        / belief.rate
    )


def sample_gamma_many(belief: GammaBelief, rng: RngStream, size: int):
    """``size`` independent draws from the belief (compiled when available)."""
    from . import _backend

    return _backend.standard_gamma_many(belief.shape, size, rng) / belief.rate
