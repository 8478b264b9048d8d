"""Adaptive chunk sampling for distinct-object search, and the baselines.

The per-step operations (:func:`choose_chunk`, :func:`discriminate`,
:func:`observe`, the within-chunk frame samplers) are the reference
implementation. :func:`run_exsample` and friends run the whole loop either
through the compiled kernel or through these operations; both consume the
random stream identically and return identical trajectories.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .belief import belief_from_stats, standard_gamma, standard_gamma_quantile
from .core import (
    BeliefParams,
    ChunkExhausted,
    ChunkLayout,
    ChunkStats,
    DatasetExhausted,
    InvalidArgumentError,
    InvariantViolation,
    Policy,
    RngStream,
    partition_frames,
)
from .simulation import BernoulliDataset, SpanDataset


class Within(enum.Enum):
    UNIFORM = "uniform"
    LEVELSET = "levelset"


@dataclass(frozen=True)
class Results:
    k: int


@dataclass(frozen=True)
class Samples:
    k: int


@dataclass(frozen=True)
class Recall:
    r: float


def _limit_targets(limit, n_instances: int) -> tuple[int, int]:
    """(distinct-found target, sample cap); -1 means unbounded."""
    if isinstance(limit, Results):
        return limit.k, -1
    if isinstance(limit, Samples):
        return -1, limit.k
    if isinstance(limit, Recall):
        if not 0 < limit.r <= 1:
            raise InvalidArgumentError("recall level must lie in (0, 1]")
        return math.ceil(limit.r * n_instances - 1e-9), -1
    raise InvalidArgumentError(f"unknown limit {limit!r}")


class UniformChunkSampler:
    """Uniform sampling without replacement from ``[lo, hi)``.

    A lazily materialised Fisher-Yates shuffle: only swapped positions are
    stored.
    """

    def __init__(self, lo: int, hi: int):
        self.lo, self.hi = lo, hi
        self.taken = 0
        self._swaps: dict[int, int] = {}

    @property
    def remaining(self) -> int:
        return self.hi - self.lo - self.taken

    def next_frame(self, rng: RngStream) -> int:
        pos = self.lo + self.taken
        if pos >= self.hi:
            raise ChunkExhausted(f"chunk [{self.lo}, {self.hi}) is exhausted")
        r = pos + rng.randbelow(self.hi - pos)
        val = self._swaps.get(r, r)
        self._swaps[r] = self._swaps.pop(pos, pos)
        self.taken += 1
        return val


class LevelSetChunkSampler:
    """Stratified refinement over ``[lo, hi)``.

    Level ``l`` cuts the range into ``2**l`` nested strata. A level visits,
    in random order, every nonempty stratum that holds no sample yet and
    draws one uniform frame in it; after level ``l`` each nonempty stratum
    of that level holds exactly one sample.
    """

    def __init__(self, lo: int, hi: int):
        self.lo, self.hi = lo, hi
        self.size = hi - lo
        self.taken = 0
        self.level = 0
        # owner[k]: offset of the sample in stratum k of the current level, or -1
        self.owner = [-1]
        self.pending = [0] if self.size > 0 else []
        self.cursor = 0

    @property
    def remaining(self) -> int:
        return self.size - self.taken

    def _bounds(self, level: int, k: int) -> tuple[int, int]:
        return (k * self.size) >> level, ((k + 1) * self.size) >> level

    def _advance(self, rng: RngStream) -> None:
        level = self.level + 1
        owner = [-1] * (2 * len(self.owner))
        pending = []
        for k, x in enumerate(self.owner):
            mid = ((2 * k + 1) * self.size) >> level
            if x >= 0:
                owner[2 * k if x < mid else 2 * k + 1] = x
            for c in (2 * k, 2 * k + 1):
                a, b = self._bounds(level, c)
                if owner[c] < 0 and b > a:
                    pending.append(c)
        for i in range(len(pending) - 1, 0, -1):
            j = rng.randbelow(i + 1)
            pending[i], pending[j] = pending[j], pending[i]
        self.level, self.owner, self.pending, self.cursor = level, owner, pending, 0

    def next_frame(self, rng: RngStream) -> int:
        if self.taken >= self.size:
            raise ChunkExhausted(f"chunk [{self.lo}, {self.hi}) is exhausted")
        while self.cursor >= len(self.pending):
            self._advance(rng)
        k = self.pending[self.cursor]
        self.cursor += 1
        a, b = self._bounds(self.level, k)
        x = a + rng.randbelow(b - a)
        self.owner[k] = x
        self.taken += 1
        return self.lo + x


def next_frame_uniform(chunk_state: UniformChunkSampler, rng: RngStream) -> int:
    return chunk_state.next_frame(rng)


def next_frame_levelset(chunk_state: LevelSetChunkSampler, rng: RngStream) -> int:
    return chunk_state.next_frame(rng)


@dataclass(frozen=True)
class DiscriminationOutcome:
    d0: frozenset
    d1: frozenset


@dataclass
class SamplerState:
    """Mutable state of one sampling run over a chunk layout."""

    layout: ChunkLayout
    n_instances: int
    within: Within = Within.UNIFORM
    strict_global_once: bool = False
    stats: list = field(init=False)
    chunks: list = field(init=False)
    sightings: np.ndarray = field(init=False)
    first_chunk: np.ndarray = field(init=False)
    results: list = field(default_factory=list)
    t: int = 0

    def __post_init__(self):
        cls = UniformChunkSampler if Within(self.within) is Within.UNIFORM else LevelSetChunkSampler
        self.within = Within(self.within)
        self.stats = [ChunkStats() for _ in range(self.layout.m)]
        self.chunks = [cls(*self.layout.chunk_range(j)) for j in range(self.layout.m)]
        self.sightings = np.zeros(self.n_instances, dtype=np.int64)
        self.first_chunk = np.full(self.n_instances, -1, dtype=np.int64)


def _select(state: SamplerState, params: BeliefParams | None, rng: RngStream, claimed, decision: int) -> int:
    eligible = [j for j, c in enumerate(state.chunks) if c.remaining - claimed[j] > 0]
    if not eligible:
        raise DatasetExhausted("all chunks are exhausted")
    if params is None:
        # no belief model: plain uniform frame choice over one chunk
        return eligible[0]
    if params.policy is Policy.THOMPSON:
        best, best_j = -1.0, -1
        for j in eligible:
            b = belief_from_stats(state.stats[j], params)
            r = standard_gamma(b.shape, rng) / b.rate
            if r > best:
                best, best_j = r, j
        return best_j
    q = BeliefParams.ucb_quantile(decision)
    scores = []
    for j in eligible:
        b = belief_from_stats(state.stats[j], params)
        scores.append(standard_gamma_quantile(b.shape, q, 0.0, math.lgamma(b.shape)) / b.rate)
    top = max(scores)
    tied = [j for j, s in zip(eligible, scores) if s == top]
    return tied[rng.randbelow(len(tied))] if len(tied) > 1 else tied[0]


def choose_batch(state: SamplerState, b: int, params: BeliefParams | None, rng: RngStream) -> list[int]:
    """``b`` independent argmax selections from the current beliefs.

    Chunks whose unsampled frames are all claimed by earlier members of
    the batch drop out. The batch is cut short when the dataset runs out;
    an empty batch raises :class:`DatasetExhausted`.
    """
    if b < 1:
        raise InvalidArgumentError("batch size must be >= 1")
    claimed = [0] * state.layout.m
    picks = []
    for c in range(b):
        try:
            j = _select(state, params, rng, claimed, state.t + c + 1)
        except DatasetExhausted:
            if picks:
                break
            raise
        claimed[j] += 1
        picks.append(j)
    return picks


def choose_chunk(state: SamplerState, params: BeliefParams | None, rng: RngStream) -> int:
    return choose_batch(state, 1, params, rng)[0]


def discriminate(state: SamplerState, visible, chunk: int | None = None) -> DiscriminationOutcome:
    """Split the visible instances into first and second sightings, then
    record the sighting.

    ``chunk`` (the chunk the frame came from) is remembered for first
    sightings, so that under ``strict_global_once`` a later second sighting
    can be charged to it even if the updates of a batch are applied out of
    order.
    """
    ids = np.asarray(sorted(visible) if isinstance(visible, (set, frozenset)) else visible, dtype=np.int64)
    prior = state.sightings[ids]
    first = ids[prior == 0]
    out = DiscriminationOutcome(frozenset(first.tolist()), frozenset(ids[prior == 1].tolist()))
    state.sightings[ids] += 1
    if chunk is not None:
        state.first_chunk[first] = chunk
    return out


def observe(state: SamplerState, chunk: int, outcome: DiscriminationOutcome, frame: int | None = None) -> None:
    st = state.stats[chunk]
    st.n += 1
    st.n1 += len(outcome.d0)
    for i in outcome.d0:
        state.first_chunk[i] = chunk
    if state.strict_global_once:
        for i in outcome.d1:
            owner = state.first_chunk[i]
            if owner < 0:
                raise InvariantViolation(
                    f"instance {i} seen twice but its first sighting was never credited; "
                    "pass the chunk to discriminate() when batching"
                )
            state.stats[owner].n1 -= 1
    else:
        st.n1 -= len(outcome.d1)
    state.results.append((state.t, frame, sorted(outcome.d0)))
    state.t += 1


@dataclass(eq=False)
class Trajectory:
    """Record of one run: per sample, the chunk, the frame and the number of
    new distinct instances it revealed."""

    chunk: np.ndarray
    frame: np.ndarray
    new: np.ndarray
    n_instances: int
    exhausted: bool = False
    chunk_n1: np.ndarray | None = None
    chunk_n: np.ndarray | None = None
    sightings: np.ndarray | None = None

    def __len__(self):
        return len(self.frame)

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.new, dtype=np.int64)

    @property
    def distinct_found(self) -> int:
        return int(self.new.sum())

    def same_as(self, other: "Trajectory") -> bool:
        return (
            self.exhausted == other.exhausted
            and np.array_equal(self.chunk, other.chunk)
            and np.array_equal(self.frame, other.frame)
            and np.array_equal(self.new, other.new)
        )


def _visible(dataset, frame: int, rng: RngStream) -> np.ndarray:
    return dataset.visible_ids(frame, rng)


def _run_python(dataset, layout, params, within, batch, limit, rng, strict, vis_rng=None) -> Trajectory:
    n_inst = dataset.n_instances
    target, cap = _limit_targets(limit, n_inst)
    state = SamplerState(layout, n_inst, Within(within), strict)
    if vis_rng is None:
        vis_rng = rng
    chunk_log, frame_log, new_log = [], [], []
    found = 0
    exhausted = False
    while (target < 0 or found < target) and (cap < 0 or state.t < cap):
        b = batch if cap < 0 else min(batch, cap - state.t)
        try:
            picks = choose_batch(state, b, params, rng)
        except DatasetExhausted:
            exhausted = True
            break
        for j in picks:
            frame = state.chunks[j].next_frame(rng)
            outcome = discriminate(state, _visible(dataset, frame, vis_rng), j)
            observe(state, j, outcome, frame)
            chunk_log.append(j)
            frame_log.append(frame)
            new_log.append(len(outcome.d0))
            found += len(outcome.d0)
    return Trajectory(
        np.asarray(chunk_log, dtype=np.int32),
        np.asarray(frame_log, dtype=np.int64),
        np.asarray(new_log, dtype=np.int32),
        n_inst,
        exhausted,
        np.array([s.n1 for s in state.stats], dtype=np.int64),
        np.array([s.n for s in state.stats], dtype=np.int64),
        state.sightings,
    )


def _run(dataset, layout, params, within, batch, limit, rng, strict, backend=None) -> Trajectory:
    if batch < 1:
        raise InvalidArgumentError("batch must be >= 1")
    if layout.total_frames != dataset.total_frames:
        raise InvalidArgumentError("layout and dataset disagree on total_frames")
    backend = backend or _backend.active()
    if backend == "cython" and isinstance(dataset, SpanDataset):
        target, cap = _limit_targets(limit, dataset.n_instances)
        return _backend.run_spans(dataset, layout, params, Within(within), batch, target, cap, rng, strict)
    if isinstance(dataset, BernoulliDataset):
        # per-frame coin tosses come from their own stream so that frame
        # choices line up with a span run on the same sampler stream
        return _run_python(dataset, layout, params, within, batch, limit, rng, strict, rng.substream(1))
    return _run_python(dataset, layout, params, within, batch, limit, rng, strict)


def run_exsample(
    dataset,
    layout: ChunkLayout,
    params: BeliefParams = BeliefParams(),
    within: Within = Within.UNIFORM,
    batch: int = 1,
    limit=Samples(1000),
    rng: RngStream | None = None,
    strict_global_once: bool = False,
    backend: str | None = None,
) -> Trajectory:
    """Adaptive chunk sampling until ``limit`` is met or frames run out."""
    rng = rng or RngStream(0)
    return _run(dataset, layout, params, within, batch, limit, rng, strict_global_once, backend)


def run_random(dataset, limit, rng: RngStream, backend: str | None = None) -> Trajectory:
    """Uniform sampling without replacement over the whole dataset."""
    layout = partition_frames(dataset.total_frames, 1)
    return _run(dataset, layout, None, Within.UNIFORM, 1, limit, rng, False, backend)


def run_levelset_global(dataset, limit, rng: RngStream, backend: str | None = None) -> Trajectory:
    """Level-set stratified sampling over the whole dataset as one chunk."""
    layout = partition_frames(dataset.total_frames, 1)
    return _run(dataset, layout, None, Within.LEVELSET, 1, limit, rng, False, backend)


def run_sequential(dataset, stride: int, limit, rng: RngStream | None = None) -> Trajectory:
    """Frames 0, stride, 2*stride, ... in order."""
    if stride < 1:
        raise InvalidArgumentError("stride must be >= 1")
    n_inst = dataset.n_instances
    target, cap = _limit_targets(limit, n_inst)
    frames = np.arange(0, dataset.total_frames, stride, dtype=np.int64)
    if cap >= 0:
        frames = frames[:cap]
    if isinstance(dataset, SpanDataset):
        # index of the first sequence frame inside each span
        k = -(-dataset.starts // stride)
        hit = k * stride < dataset.ends
        new = np.bincount(k[hit], minlength=frames.size)[: frames.size].astype(np.int32)
    else:
        vis_rng = (rng or RngStream(0)).substream(1)
        seen = np.zeros(n_inst, dtype=bool)
        new = np.zeros(frames.size, dtype=np.int32)
        for t, f in enumerate(frames.tolist()):
            ids = dataset.visible_ids(f, vis_rng)
            fresh = ids[~seen[ids]]
            seen[fresh] = True
            new[t] = fresh.size
            if 0 <= target <= seen.sum():
                new = new[: t + 1]
                break
    if target >= 0:
        cum = np.cumsum(new)
        reached = np.flatnonzero(cum >= target)
        if reached.size:
            new = new[: reached[0] + 1]
    n = new.size
    exhausted = (target >= 0 and new.sum() < target) or (cap >= 0 and n < cap)
    return Trajectory(np.zeros(n, dtype=np.int32), frames[:n], new, n_inst, bool(exhausted))
