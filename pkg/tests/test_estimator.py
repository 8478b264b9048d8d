import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exsample.core import InvalidArgumentError, RngStream
from exsample.estimator import (
    DurationStats,
    UndefinedBiasError,
    analytic_relative_bias,
    bias_gap_terms,
    bias_upper_bounds,
    conditional_r_next,
    duration_stats,
    expected_n1,
    expected_r_next,
    gt_estimate,
    pi_first_hit,
    poisson_lambda,
    pow1m,
)
from exsample.simulation import P_SIGMA_LOG, bernoulli_hit_times, gen_lognormal_p

mpmath.mp.dps = 50

probs = st.floats(1e-6, 1.0, allow_nan=False, exclude_min=False)
p_vectors = arrays(np.float64, st.integers(1, 60), elements=probs)


def mp_sum(f, p):
    return float(mpmath.fsum(f(mpmath.mpf(float(x))) for x in p))


# -- examples --------------------------------------------------------------


@pytest.mark.parametrize("n1,n,expected", [(0, 10, 0.0), (5, 100, 0.05), (120, 60, 2.0)])
def test_gt_estimate(n1, n, expected):
    assert gt_estimate(n1, n) == expected


def test_gt_estimate_needs_samples():
    with pytest.raises(InvalidArgumentError):
        gt_estimate(3, 0)


@pytest.mark.parametrize("p,n,expected", [(1.0, 5, 0.0), (0.5, 1, 0.25), (0.01, 0, 0.01)])
def test_pi_first_hit(p, n, expected):
    assert pi_first_hit(p, n) == pytest.approx(expected, abs=1e-15)


def test_expected_r_next_examples():
    assert expected_r_next([1.0], 0) == 1.0
    assert expected_r_next([0.5, 0.5], 1) == 0.5


def test_expected_r_next_at_zero_is_total_mass():
    p = gen_lognormal_p(1000, 3e-3, P_SIGMA_LOG, RngStream(2))
    assert expected_r_next(p, 0) == pytest.approx(math.fsum(p), rel=1e-15)
    # about N * target mean
    assert expected_r_next(p, 0) == pytest.approx(3.0, rel=0.35)


@pytest.mark.parametrize("seen,expected", [({0, 1}, 0.0), (set(), 0.5), ({0}, 0.3)])
def test_conditional_r_next(seen, expected):
    assert conditional_r_next([0.2, 0.3], seen) == pytest.approx(expected, abs=1e-15)


def test_conditional_r_next_mask_and_range():
    assert conditional_r_next([0.2, 0.3], np.array([True, False])) == pytest.approx(0.3)
    with pytest.raises(InvalidArgumentError):
        conditional_r_next([0.2, 0.3], {2})


@pytest.mark.parametrize("p,n,expected", [([1.0], 2, 0.0), ([0.5], 1, 0.5), ([0.5, 0.5], 2, 1.0)])
def test_expected_n1(p, n, expected):
    assert expected_n1(p, n) == pytest.approx(expected, abs=1e-15)


def test_relative_bias_examples():
    for c in (1e-4, 0.01, 0.3, 1.0):
        for n in (1, 7, 1000):
            if c == 1.0 and n > 1:
                continue
            assert analytic_relative_bias([c] * 5, n) == pytest.approx(c, rel=1e-14)
    assert analytic_relative_bias([0.5, 0.5], 1) == 0.5


def test_relative_bias_lognormal_workload():
    p = gen_lognormal_p(1000, 3e-3, P_SIGMA_LOG, RngStream(2))
    r = analytic_relative_bias(p, 1000)
    assert 0 <= r <= p.max()
    oracle = mp_sum(lambda x: x * x * (1 - x) ** 999, p) / mp_sum(lambda x: x * (1 - x) ** 999, p)
    assert r == pytest.approx(oracle, rel=1e-12)


def test_relative_bias_undefined():
    with pytest.raises(UndefinedBiasError):
        analytic_relative_bias([1.0, 1.0], 3)
    with pytest.raises(InvalidArgumentError):
        analytic_relative_bias([0.5], 0)


def test_bias_upper_bounds_examples():
    b1, b2 = bias_upper_bounds(DurationStats(3e-3, 8e-3, 0.15), 1000)
    assert b1 == 0.15
    assert b2 == pytest.approx(math.sqrt(1000) * 0.011, rel=1e-12)
    assert b2 == pytest.approx(0.348, abs=5e-4)
    assert bias_upper_bounds(duration_stats([0.2]), 1) == pytest.approx((0.2, 0.2))
    assert bias_upper_bounds(DurationStats(0.5, 0.5, 1.0), 4)[0] == 1.0


def test_poisson_lambda_examples():
    assert poisson_lambda([0.5], 1) == 0.5
    assert poisson_lambda([1.0], 3) == 0.0
    lam = poisson_lambda([1e-4] * 100, 1000)
    oracle = float(100 * 1000 * mpmath.mpf("1e-4") * (1 - mpmath.mpf("1e-4")) ** 999)
    assert lam == pytest.approx(oracle, rel=1e-12)
    assert lam == pytest.approx(9.05, abs=0.005)


def test_duration_stats():
    s = duration_stats([0.1, 0.1, 0.1])
    assert (s.mu_p, s.sigma_p, s.max_p) == (0.1, 0.0, 0.1)
    s = duration_stats([0.1, 0.3])
    assert s.sigma_p == pytest.approx(0.1)  # population, not sample, deviation
    with pytest.raises(InvalidArgumentError):
        duration_stats([])
    with pytest.raises(InvalidArgumentError):
        duration_stats([0.0, 0.5])


def test_pow1m_extremes():
    assert pow1m(1.0, 0) == 1.0
    assert pow1m(1.0, 3) == 0.0
    p, k = 1e-7, 10_000_000
    assert float(pow1m(p, k)) == pytest.approx(float((1 - mpmath.mpf(p)) ** k), rel=1e-12)


def test_lognormal_workload_stats_match_setup():
    p = gen_lognormal_p(1000, 3e-3, P_SIGMA_LOG, RngStream(2))
    s = duration_stats(p)
    assert 1e-3 < s.mu_p < 1e-2
    assert 2e-3 < s.sigma_p < 3e-2


# -- exact oracle by enumerating every hit pattern --------------------------


def enumerate_process(p, n):
    """E[N1(n)] and E[R(n+1)] by summing over all 2^(N n) visibility patterns."""
    N = len(p)
    e_n1 = e_r = 0.0
    for pattern in itertools.product((0, 1), repeat=N * n):
        hits = np.array(pattern).reshape(n, N)
        prob = np.prod(np.where(hits == 1, p, 1 - np.asarray(p)))
        counts = hits.sum(axis=0)
        e_n1 += prob * np.count_nonzero(counts == 1)
        e_r += prob * sum(pi for pi, c in zip(p, counts) if c == 0)
    return e_n1, e_r


@pytest.mark.parametrize("p,n", [([0.3, 0.6], 3), ([0.1, 0.5, 0.9], 2), ([0.25], 5), ([0.2, 0.7, 0.5], 3)])
def test_closed_forms_match_enumeration(p, n):
    e_n1, e_r = enumerate_process(p, n)
    assert expected_n1(p, n) == pytest.approx(e_n1, rel=1e-12)
    assert expected_r_next(p, n) == pytest.approx(e_r, rel=1e-12)


# -- properties --------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(p_vectors, st.integers(1, 100_000))
def test_bias_nonnegative_and_bounded(p, n):
    try:
        r = analytic_relative_bias(p, n)
    except UndefinedBiasError:
        assume(False)
    s = duration_stats(p)
    b1, b2 = bias_upper_bounds(s, p.size)
    assert r >= -1e-12
    assert r <= min(b1, b2) + 1e-9


@settings(max_examples=200, deadline=None)
@given(p_vectors, st.integers(1, 5000))
def test_identity_term_for_term(p, n):
    terms = bias_gap_terms(p, n)
    direct = n * p * pow1m(p, n - 1) / n - p * pow1m(p, n)
    np.testing.assert_allclose(terms, direct, rtol=0, atol=1e-12)
    lhs = expected_n1(p, n) / n - expected_r_next(p, n)
    assert lhs == pytest.approx(math.fsum(terms), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(1e-3, 0.999)), st.integers(1, 400))
def test_closed_forms_match_mpmath(p, n):
    assert expected_n1(p, n) == pytest.approx(mp_sum(lambda x: n * x * (1 - x) ** (n - 1), p), rel=1e-11, abs=1e-300)
    assert expected_r_next(p, n) == pytest.approx(mp_sum(lambda x: x * (1 - x) ** n, p), rel=1e-11, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(p_vectors)
def test_gt_estimate_tracks_r_next_in_expectation(p):
    # E[N1/n] >= E[R(n+1)] for all n: the estimator overestimates
    for n in (1, 10, 1000):
        assert expected_n1(p, n) / n >= expected_r_next(p, n) - 1e-12


# -- Monte Carlo -------------------------------------------------------------


def test_monte_carlo_mean_and_variance():
    p = gen_lognormal_p(300, 3e-3, P_SIGMA_LOG, RngStream(4))
    t1, t2 = bernoulli_hit_times(p, 4000, RngStream(4).substream(9))
    for n in (10, 300, 3000):
        n1 = np.count_nonzero((t1 <= n) & (t2 > n), axis=1)
        lam = expected_n1(p, n)
        se = n1.std(ddof=1) / math.sqrt(n1.size)
        assert abs(n1.mean() - lam) <= 4 * se
        assert n1.var(ddof=1) / n**2 <= 1.05 * lam / n**2


def test_hit_times_match_direct_coin_tossing():
    # geometric hit times versus tossing every coin at every frame
    p = np.array([0.05, 0.2, 0.5])
    reps, n = 20000, 12
    t1, t2 = bernoulli_hit_times(p, reps, RngStream(1))
    fast = np.count_nonzero((t1 <= n) & (t2 > n), axis=1)
    gen = np.random.default_rng(3)
    slow = np.count_nonzero((gen.random((reps, n, p.size)) < p).sum(axis=1) == 1, axis=1)
    se = math.sqrt(fast.var() / reps + slow.var() / reps)
    assert abs(fast.mean() - slow.mean()) < 4 * se
    assert abs(fast.mean() - expected_n1(p, n)) < 4 * math.sqrt(fast.var() / reps)
