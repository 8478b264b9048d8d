"""Adaptive chunk sampling for distinct-object search."""

from ._backend import active as active_backend
from .analysis import (
    expected_random_curve,
    expected_weighted_curve,
    optimal_allocation,
    samples_to_recall,
    savings,
)
from .belief import GammaBelief, belief_from_stats, gamma_quantile, sample_gamma
from .core import BeliefParams, ChunkLayout, ChunkStats, Policy, RngStream, chunk_of, partition_frames
from .sampler import (
    Recall,
    Results,
    Samples,
    Trajectory,
    Within,
    run_exsample,
    run_levelset_global,
    run_random,
    run_sequential,
)
from .simulation import BernoulliDataset, SpanDataset, compute_p_matrix, load_spans, place_spans

__version__ = "0.1.0"
