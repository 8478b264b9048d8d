"""Shared domain types: chunk layouts, per-chunk counters, belief parameters
and seeded random streams."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

_DOUBLE_SCALE = 1.0 / 9007199254740992.0  # 2**-53


class ExSampleError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(ExSampleError, ValueError):
    pass


class DatasetExhausted(ExSampleError):
    """Every chunk has run out of unsampled frames."""


class ChunkExhausted(ExSampleError):
    """The requested chunk has no unsampled frames left."""


class InvariantViolation(ExSampleError):
    """An internal bookkeeping invariant did not hold."""


@dataclass(frozen=True, eq=False)
class ChunkLayout:
    """M contiguous chunks covering frames ``[0, total_frames)``.

    ``boundaries`` has M+1 entries; chunk ``j`` is
    ``[boundaries[j], boundaries[j+1])``.
    """

    total_frames: int
    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.int64)
        if b.ndim != 1 or len(b) < 2:
            raise InvalidArgumentError("boundaries needs at least two entries")
        if b[0] != 0 or b[-1] != self.total_frames:
            raise InvalidArgumentError("boundaries must start at 0 and end at total_frames")
        if np.any(np.diff(b) <= 0):
            raise InvalidArgumentError("boundaries must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def m(self) -> int:
        return len(self.boundaries) - 1

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def chunk_range(self, j: int) -> tuple[int, int]:
        return int(self.boundaries[j]), int(self.boundaries[j + 1])

    def __eq__(self, other):
        if not isinstance(other, ChunkLayout):
            return NotImplemented
        return self.total_frames == other.total_frames and np.array_equal(
            self.boundaries, other.boundaries
        )

    def __repr__(self):
        return f"ChunkLayout(total_frames={self.total_frames}, m={self.m})"


def partition_frames(total_frames: int, m: int) -> ChunkLayout:
    """Split ``total_frames`` into ``m`` contiguous chunks whose sizes differ
    by at most one; the first ``total_frames % m`` chunks get the extra frame."""
    if m < 1 or m > total_frames:
        raise InvalidArgumentError(
            f"need 1 <= m <= total_frames, got m={m}, total_frames={total_frames}"
        )
    base, extra = divmod(total_frames, m)
    sizes = np.full(m, base, dtype=np.int64)
    sizes[:extra] += 1
    boundaries = np.concatenate(([0], np.cumsum(sizes)))
    return ChunkLayout(total_frames, boundaries)


def chunk_of(layout: ChunkLayout, frame: int) -> int:
    if not 0 <= frame < layout.total_frames:
        raise InvalidArgumentError(f"frame {frame} outside [0, {layout.total_frames})")
    return int(np.searchsorted(layout.boundaries, frame, side="right")) - 1


@dataclass
class ChunkStats:
    """Per-chunk counters: ``n1`` instances credited as seen exactly once,
    ``n`` frames sampled."""

    n1: int = 0
    n: int = 0


class Policy(enum.Enum):
    THOMPSON = "thompson"
    BAYES_UCB = "bayes-ucb"


@dataclass(frozen=True)
class BeliefParams:
    alpha0: float = 0.1
    beta0: float = 1.0
    policy: Policy = Policy.THOMPSON

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise InvalidArgumentError("alpha0 and beta0 must be positive")
        object.__setattr__(self, "policy", Policy(self.policy))

    @staticmethod
    def ucb_quantile(t: int) -> float:
        """Bayes-UCB quantile for decision ``t`` (1-based): ``1 - 1/(t+1)``."""
        if t < 1:
            raise InvalidArgumentError("decision index starts at 1")
        return 1.0 - 1.0 / (t + 1)


class RngStream:
    """Reproducible PCG64 stream identified by ``(seed, stream_id)``.

    Child streams from :meth:`substream` are derived through
    ``SeedSequence`` spawn keys, so they are independent of the parent and
    of each other. The compiled kernels draw from the same bit generator,
    which keeps both backends on one sequence of raw 64-bit words.
    """

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple = ()):
        if not (0 <= seed < 2**64 and 0 <= stream_id < 2**64):
            raise InvalidArgumentError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = tuple(_path)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self._path))
        self.bit_generator = np.random.PCG64(seq)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self._path})"

    def substream(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self._path + tuple(key))

    def generator(self) -> np.random.Generator:
        """numpy Generator sharing this stream's bit generator."""
        return np.random.Generator(self.bit_generator)

    def next_uint64(self) -> int:
        return int(self.bit_generator.random_raw())

    def uniform(self) -> float:
        """Double in [0, 1)."""
        return (self.next_uint64() >> 11) * _DOUBLE_SCALE

    def uniform_open(self) -> float:
        """Double in (0, 1), safe to take the log of."""
        return ((self.next_uint64() >> 11) + 0.5) * _DOUBLE_SCALE

    def randbelow(self, k: int) -> int:
        """Integer uniform on ``[0, k)``."""
        r = int(self.uniform() * k)
        return k - 1 if r >= k else r

    def normal(self) -> float:
        """Standard normal by the polar method; the paired variate is discarded."""
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                return u * math.sqrt(-2.0 * math.log(s) / s)
