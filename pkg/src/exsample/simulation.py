"""Synthetic workloads: iid Bernoulli visibility and contiguous spans with
normally skewed placement, plus the per-chunk hit-probability matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np
from scipy import sparse

from .core import ChunkLayout, ExSampleError, InvalidArgumentError, RngStream

SPANS_MAGIC = "exsample-spans v1"
Z975 = NormalDist().inv_cdf(0.975)


class UnsupportedModelError(ExSampleError):
    pass


def calibrate_duration_sigma(n_instances: int = 2000, extreme_ratio: float = 100.0) -> float:
    """Log-scale sigma whose expected max/min ratio over ``n_instances``
    lognormal draws equals ``extreme_ratio`` (Blom plotting positions)."""
    z_max = NormalDist().inv_cdf((n_instances - 0.375) / (n_instances + 0.25))
    return math.log(extreme_ratio) / (2.0 * z_max)


# durations of ~50..5000 frames around a mean of 700 for 2000 instances
DURATION_SIGMA_LOG = calibrate_duration_sigma(2000, 100.0)
# per-frame hit probabilities with mean 3e-3, median ~1e-3, sd ~8e-3
P_SIGMA_LOG = 1.4


@dataclass(frozen=True, eq=False)
class BernoulliDataset:
    """Each instance is visible in any frame independently with probability p_i."""

    total_frames: int
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.size and not np.all((p > 0) & (p <= 1)):
            raise InvalidArgumentError("Bernoulli p entries must lie in (0, 1]")
        object.__setattr__(self, "p", p)

    @property
    def n_instances(self) -> int:
        return int(self.p.size)

    def visible_ids(self, frame: int, rng: RngStream) -> np.ndarray:
        if not 0 <= frame < self.total_frames:
            raise InvalidArgumentError(f"frame {frame} outside [0, {self.total_frames})")
        if self.p.size == 0:
            return np.empty(0, dtype=np.int64)
        u = (rng.bit_generator.random_raw(self.p.size) >> np.uint64(11)) * 2.0**-53
        return np.flatnonzero(u < self.p)

    def visible_at(self, frame: int, rng: RngStream) -> set[int]:
        return set(self.visible_ids(frame, rng).tolist())


@dataclass(frozen=True, eq=False)
class SpanDataset:
    """Instance ``i`` is visible on frames ``[starts[i], ends[i])``.

    Frames are looked up through the elementary segments cut by all span
    endpoints, so memory scales with the number of instances rather than
    the number of frames.
    """

    total_frames: int
    starts: np.ndarray
    ends: np.ndarray
    seg_bounds: np.ndarray = field(init=False, repr=False)
    seg_ptr: np.ndarray = field(init=False, repr=False)
    seg_ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        f = int(self.total_frames)
        if f < 1:
            raise InvalidArgumentError("total_frames must be positive")
        s = np.asarray(self.starts, dtype=np.int64)
        e = np.asarray(self.ends, dtype=np.int64)
        if s.shape != e.shape or s.ndim != 1:
            raise InvalidArgumentError("starts and ends must be vectors of equal length")
        if s.size and (s.min() < 0 or e.max() > f or np.any(e <= s)):
            raise InvalidArgumentError("spans must be nonempty and inside [0, total_frames)")
        bounds = np.unique(np.concatenate(([0, f], s, e)))
        lo = np.searchsorted(bounds, s)
        hi = np.searchsorted(bounds, e)
        counts = hi - lo
        inst = np.repeat(np.arange(s.size, dtype=np.int64), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        seg = np.repeat(lo, counts) + offs
        order = np.argsort(seg, kind="stable")
        n_seg = len(bounds) - 1
        ptr = np.zeros(n_seg + 1, dtype=np.int64)
        np.cumsum(np.bincount(seg, minlength=n_seg), out=ptr[1:])
        for name, val in (
            ("starts", s),
            ("ends", e),
            ("seg_bounds", bounds),
            ("seg_ptr", ptr),
            ("seg_ids", inst[order]),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_instances(self) -> int:
        return int(self.starts.size)

    @property
    def lengths(self) -> np.ndarray:
        return self.ends - self.starts

    @property
    def p(self) -> np.ndarray:
        """Global per-frame hit probabilities ``length / total_frames``."""
        return self.lengths / self.total_frames

    def visible_ids(self, frame: int, rng: RngStream | None = None) -> np.ndarray:
        if not 0 <= frame < self.total_frames:
            raise InvalidArgumentError(f"frame {frame} outside [0, {self.total_frames})")
        k = int(np.searchsorted(self.seg_bounds, frame, side="right")) - 1
        return self.seg_ids[self.seg_ptr[k] : self.seg_ptr[k + 1]]

    def visible_at(self, frame: int, rng: RngStream | None = None) -> set[int]:
        return set(self.visible_ids(frame).tolist())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{SPANS_MAGIC} total_frames={self.total_frames}\n")
            for i, (s, e) in enumerate(zip(self.starts.tolist(), self.ends.tolist())):
                fh.write(f"{i},{s},{e - s}\n")


def load_spans(path) -> SpanDataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise InvalidArgumentError(f"{path}: empty spans file")
    head = lines[0].split()
    if " ".join(head[:2]) != SPANS_MAGIC or len(head) != 3 or not head[2].startswith("total_frames="):
        raise InvalidArgumentError(f"{path}:1: expected '{SPANS_MAGIC} total_frames=<F>'")
    try:
        total = int(head[2].split("=", 1)[1])
    except ValueError:
        raise InvalidArgumentError(f"{path}:1: total_frames is not an integer") from None
    starts, lengths = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            ident, start, length = (int(x) for x in parts)
        except ValueError:
            raise InvalidArgumentError(f"{path}:{lineno}: expected 'id,start,length'") from None
        if ident != len(starts):
            raise InvalidArgumentError(f"{path}:{lineno}: ids must be 0..N-1 in order")
        starts.append(start)
        lengths.append(length)
    s = np.array(starts, dtype=np.int64)
    return SpanDataset(total, s, s + np.array(lengths, dtype=np.int64))


def gen_lognormal_p(n_instances: int, target_mean: float, sigma_log: float, rng: RngStream) -> np.ndarray:
    """Lognormal hit probabilities whose distribution mean is ``target_mean``,
    clamped into (0, 1]."""
    if not 0 < target_mean < 1:
        raise InvalidArgumentError("target_mean must lie in (0, 1)")
    if not sigma_log > 0:
        raise InvalidArgumentError("sigma_log must be positive")
    mu = math.log(target_mean) - 0.5 * sigma_log**2
    x = rng.generator().lognormal(mu, sigma_log, n_instances)
    return np.clip(x, np.finfo(float).tiny, 1.0)


def gen_lognormal_durations(
    n_instances: int,
    target_mean_frames: float,
    rng: RngStream,
    scale: float = 1.0,
    sigma_log: float = DURATION_SIGMA_LOG,
) -> np.ndarray:
    """Lognormal instance durations in frames with mean ``target_mean_frames``.

    ``scale`` multiplies every duration before rounding (the grid's way of
    shifting the mean by a constant factor). Results are at least 1.
    """
    if target_mean_frames < 1:
        raise InvalidArgumentError("target_mean_frames must be >= 1")
    if not scale > 0:
        raise InvalidArgumentError("scale must be positive")
    mu = math.log(target_mean_frames) - 0.5 * sigma_log**2
    x = rng.generator().lognormal(mu, sigma_log, n_instances) * scale
    return np.maximum(np.rint(x), 1).astype(np.int64)


def skew_sigma(total_frames: int, fraction: float) -> float:
    """Normal sigma putting 95% of centers within the central ``fraction``
    of the frames."""
    if not 0 < fraction <= 1:
        raise InvalidArgumentError("fraction must lie in (0, 1]")
    return total_frames * fraction / (2.0 * Z975)


def place_spans(lengths, total_frames: int, placement_sigma: float | None, rng: RngStream) -> SpanDataset:
    """Center each span on a Normal(total_frames / 2, placement_sigma) draw.

    ``placement_sigma=None`` places centers uniformly (no skew). Centers
    outside the dataset are redrawn. A span that would stick out past an
    edge is slid back inside, so every span keeps its length (capped at
    ``total_frames``).
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.size and lengths.min() < 1:
        raise InvalidArgumentError("span lengths must be >= 1")
    gen = rng.generator()
    n = lengths.size
    if placement_sigma is None:
        centers = gen.uniform(0.0, total_frames, n)
    else:
        if not placement_sigma > 0:
            raise InvalidArgumentError("placement_sigma must be positive")
        centers = gen.normal(total_frames / 2.0, placement_sigma, n)
        bad = (centers < 0) | (centers >= total_frames)
        while bad.any():
            centers[bad] = gen.normal(total_frames / 2.0, placement_sigma, int(bad.sum()))
            bad = (centers < 0) | (centers >= total_frames)
    lengths = np.minimum(lengths, total_frames)
    start = np.floor(centers).astype(np.int64) - lengths // 2
    start = np.clip(start, 0, total_frames - lengths)
    return SpanDataset(total_frames, start, start + lengths)


@dataclass(frozen=True, eq=False)
class PMatrix:
    """Sparse instances x chunks matrix of conditional hit probabilities."""

    matrix: sparse.csr_array
    chunk_sizes: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def global_p(self) -> np.ndarray:
        return self.matrix @ self.chunk_sizes.astype(np.float64) / self.chunk_sizes.sum()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def compute_p_matrix(dataset: SpanDataset, layout: ChunkLayout) -> PMatrix:
    if not isinstance(dataset, SpanDataset):
        raise UnsupportedModelError("the P matrix is defined for span datasets only")
    if dataset.total_frames != layout.total_frames:
        raise InvalidArgumentError("dataset and layout disagree on total_frames")
    b = layout.boundaries
    s, e = dataset.starts, dataset.ends
    j_lo = np.searchsorted(b, s, side="right") - 1
    j_hi = np.searchsorted(b, e - 1, side="right") - 1
    counts = j_hi - j_lo + 1
    rows = np.repeat(np.arange(s.size), counts)
    cols = np.repeat(j_lo, counts) + (np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts))
    overlap = np.minimum(np.repeat(e, counts), b[cols + 1]) - np.maximum(np.repeat(s, counts), b[cols])
    sizes = layout.sizes
    vals = overlap / sizes[cols]
    mat = sparse.csr_array((vals, (rows, cols)), shape=(s.size, layout.m))
    return PMatrix(mat, sizes)


def bernoulli_hit_times(p, reps: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """First and second sighting times (1-based sample index) per instance.

    Under iid per-frame visibility the gaps between sightings are geometric,
    so ``N1(n) = #{i : t1_i <= n < t2_i}`` has exactly the law obtained by
    tossing every coin at every frame.
    """
    p = np.asarray(p, dtype=np.float64)
    gen = rng.generator()
    t1 = gen.geometric(p, size=(reps, p.size))
    t2 = t1 + gen.geometric(p, size=(reps, p.size))
    return t1, t2
