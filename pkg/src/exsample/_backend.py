"""Kernel selection: the compiled extension when importable, else the
pure-Python loop. ``EXSAMPLE_BACKEND=python`` forces the fallback."""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

from .core import InvalidArgumentError, Policy

_POLICY_CODES = {None: 0, Policy.THOMPSON: 1, Policy.BAYES_UCB: 2}


def available() -> list[str]:
    return ["cython", "python"] if _kernels is not None else ["python"]


def active() -> str:
    forced = os.environ.get("EXSAMPLE_BACKEND", "").strip().lower()
    if forced in ("", "auto"):
        return "cython" if _kernels is not None else "python"
    if forced not in ("cython", "python"):
        raise InvalidArgumentError(f"EXSAMPLE_BACKEND must be auto, cython or python, not {forced!r}")
    if forced == "cython" and _kernels is None:
        raise InvalidArgumentError("EXSAMPLE_BACKEND=cython but the extension is not built")
    return forced


def run_spans(dataset, layout, params, within, batch, target, cap, rng, strict):
    from .sampler import Trajectory, Within

    if _kernels is None:
        raise InvalidArgumentError("compiled kernel unavailable")
    n = dataset.n_instances
    if params is None:
        policy, alpha0, beta0 = 0, 1.0, 1.0
        lgamma_table = np.zeros(1)
    else:
        policy, alpha0, beta0 = _POLICY_CODES[params.policy], params.alpha0, params.beta0
        # Bayes-UCB shapes are k + alpha0 for integer k; tabulated with the
        # same lgamma the reference path calls
        lgamma_table = np.array([math.lgamma(k + alpha0) for k in range(n + 1)])
    bg = rng.bit_generator
    with bg.lock:
        chunk, frame, new, n1, nn, sightings, exhausted = _kernels.run_spans(
            bg,
            np.ascontiguousarray(layout.boundaries),
            np.ascontiguousarray(dataset.seg_bounds),
            np.ascontiguousarray(dataset.seg_ptr),
            np.ascontiguousarray(dataset.seg_ids),
            n,
            policy,
            alpha0,
            beta0,
            lgamma_table,
            within is Within.LEVELSET,
            batch,
            target,
            cap,
            strict,
        )
    return Trajectory(chunk, frame, new, n, exhausted, n1, nn, sightings)


def standard_gamma_many(shape: float, count: int, rng) -> np.ndarray:
    if active() == "cython":
        bg = rng.bit_generator
        with bg.lock:
            return _kernels.standard_gamma_many(bg, float(shape), int(count))
    from .belief import standard_gamma

    return np.array([standard_gamma(shape, rng) for _ in range(count)])
