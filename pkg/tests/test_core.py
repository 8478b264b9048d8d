import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exsample.core import (
    BeliefParams,
    ChunkLayout,
    ChunkStats,
    InvalidArgumentError,
    Policy,
    RngStream,
    chunk_of,
    partition_frames,
)


def test_partition_equal_division():
    layout = partition_frames(16_000_000, 128)
    assert layout.m == 128
    assert np.all(layout.sizes == 125_000)


def test_partition_single_chunk():
    layout = partition_frames(10, 1)
    assert layout.chunk_range(0) == (0, 10)


def test_partition_remainder_goes_first():
    assert partition_frames(10, 3).sizes.tolist() == [4, 3, 3]


@pytest.mark.parametrize("total,m", [(10, 0), (10, 11), (1, 2)])
def test_partition_rejects_bad_m(total, m):
    with pytest.raises(InvalidArgumentError):
        partition_frames(total, m)


@pytest.mark.parametrize("frame,expected", [(0, 0), (3, 0), (4, 1), (6, 1), (7, 2), (9, 2)])
def test_chunk_of(frame, expected):
    assert chunk_of(partition_frames(10, 3), frame) == expected


@pytest.mark.parametrize("frame", [-1, 10, 100])
def test_chunk_of_out_of_range(frame):
    with pytest.raises(InvalidArgumentError):
        chunk_of(partition_frames(10, 3), frame)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5000), st.data())
def test_partition_is_total(total, data):
    m = data.draw(st.integers(1, total))
    layout = partition_frames(total, m)
    sizes = layout.sizes
    assert sizes.sum() == total
    assert sizes.max() - sizes.min() <= 1
    assert np.all(np.diff(sizes) <= 0)
    frames = np.arange(total)
    owners = [chunk_of(layout, int(f)) for f in frames[:: max(1, total // 200)]]
    assert owners == sorted(owners)
    for j in range(layout.m):
        lo, hi = layout.chunk_range(j)
        assert chunk_of(layout, lo) == j and chunk_of(layout, hi - 1) == j


def test_layout_validation():
    with pytest.raises(InvalidArgumentError):
        ChunkLayout(10, [0, 5, 5, 10])
    with pytest.raises(InvalidArgumentError):
        ChunkLayout(10, [1, 10])
    with pytest.raises(InvalidArgumentError):
        ChunkLayout(10, [0, 9])
    layout = ChunkLayout(10, [0, 2, 10])
    assert layout.m == 2 and layout != partition_frames(10, 2)
    with pytest.raises(ValueError):
        layout.boundaries[0] = 3


def test_chunk_stats_defaults():
    s = ChunkStats()
    assert (s.n1, s.n) == (0, 0)


def test_belief_params():
    p = BeliefParams()
    assert (p.alpha0, p.beta0, p.policy) == (0.1, 1.0, Policy.THOMPSON)
    assert BeliefParams(policy="bayes-ucb").policy is Policy.BAYES_UCB
    for bad in [(0.0, 1.0), (0.1, 0.0), (-1.0, 1.0)]:
        with pytest.raises(InvalidArgumentError):
            BeliefParams(*bad)


def test_ucb_schedule():
    assert BeliefParams.ucb_quantile(1) == 0.5
    qs = [BeliefParams.ucb_quantile(t) for t in range(1, 1000)]
    assert all(0 < q < 1 for q in qs)
    assert all(a < b for a, b in zip(qs, qs[1:]))
    with pytest.raises(InvalidArgumentError):
        BeliefParams.ucb_quantile(0)


def test_rng_reproducible():
    a, b = RngStream(7, 3), RngStream(7, 3)
    assert [a.next_uint64() for _ in range(20)] == [b.next_uint64() for _ in range(20)]
    a, b = RngStream(7, 3).substream(1, 2), RngStream(7, 3).substream(1, 2)
    assert [a.normal() for _ in range(20)] == [b.normal() for _ in range(20)]


def test_rng_streams_differ():
    draws = {
        key: tuple(r.next_uint64() for _ in range(4))
        for key, r in {
            "base": RngStream(7, 0),
            "other_id": RngStream(7, 1),
            "other_seed": RngStream(8, 0),
            "sub": RngStream(7, 0).substream(0),
            "sub1": RngStream(7, 0).substream(1),
        }.items()
    }
    assert len(set(draws.values())) == len(draws)


def test_rng_rejects_bad_seed():
    with pytest.raises(InvalidArgumentError):
        RngStream(-1)
    with pytest.raises(InvalidArgumentError):
        RngStream(0, 2**64)


def test_uniform_ranges_and_moments():
    r = RngStream(11)
    u = np.array([r.uniform() for _ in range(20000)])
    uo = np.array([r.uniform_open() for _ in range(20000)])
    assert u.min() >= 0 and u.max() < 1
    assert uo.min() > 0 and uo.max() < 1
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / u.size)
    k = np.array([r.randbelow(7) for _ in range(70000)])
    counts = np.bincount(k, minlength=7)
    assert k.min() == 0 and k.max() == 6
    assert np.all(np.abs(counts - 10000) < 4 * math.sqrt(10000 * 6 / 7))


def test_normal_moments():
    r = RngStream(5)
    z = np.array([r.normal() for _ in range(50000)])
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * math.sqrt(2 / z.size)
