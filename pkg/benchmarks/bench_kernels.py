"""Compare the compiled and pure-Python sampling kernels.

Both backends consume the same random stream, so each case also checks
that they return identical trajectories.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np

from exsample import _backend
from exsample.core import BeliefParams, Policy, RngStream, partition_frames
from exsample.sampler import Recall, Samples, Within, run_exsample, run_random
from exsample.belief import GammaBelief, sample_gamma_many
from exsample.simulation import gen_lognormal_durations, place_spans, skew_sigma


def dataset(n_inst: int, frames: int, skew: float | None):
    lengths = gen_lognormal_durations(n_inst, 700, RngStream(1, 0))
    sigma = None if skew is None else skew_sigma(frames, skew)
    return place_spans(lengths, frames, sigma, RngStream(1, 1))


def cases(quick: bool):
    ds = dataset(500, 1_000_000, 1 / 32)
    cap = Samples(2_000 if quick else 20_000)
    # Bayes-UCB inverts a gamma CDF for every chunk at every decision
    ucb_cap = Samples(200 if quick else 1_000)
    m64 = partition_frames(ds.total_frames, 64)
    m512 = partition_frames(ds.total_frames, 512)
    ucb = BeliefParams(0.1, 1.0, Policy.BAYES_UCB)
    return [
        ("thompson M=64", lambda b: run_exsample(ds, m64, limit=cap, rng=RngStream(2), backend=b)),
        ("thompson M=512", lambda b: run_exsample(ds, m512, limit=cap, rng=RngStream(2), backend=b)),
        (
            f"bayes-ucb M=64 ({ucb_cap.k} samples)",
            lambda b: run_exsample(ds, m64, ucb, limit=ucb_cap, rng=RngStream(2), backend=b),
        ),
        (
            "thompson M=64 levelset B=50",
            lambda b: run_exsample(ds, m64, within=Within.LEVELSET, batch=50, limit=cap, rng=RngStream(2), backend=b),
        ),
        ("random to 50% recall", lambda b: run_random(ds, Recall(0.5), RngStream(2), backend=b)),
    ]


def _gamma(backend: str, count: int):
    old = os.environ.get("EXSAMPLE_BACKEND")
    os.environ["EXSAMPLE_BACKEND"] = backend
    try:
        return sample_gamma_many(GammaBelief(0.6, 3.0), RngStream(3), count)
    finally:
        if old is None:
            del os.environ["EXSAMPLE_BACKEND"]
        else:
            os.environ["EXSAMPLE_BACKEND"] = old


def best_of(fn, repeat: int):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b) -> bool:
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return np.array_equal(a.frame, b.frame) and np.array_equal(a.new, b.new)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    args = ap.parse_args()
    if "cython" not in _backend.available():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    rows = [(name, lambda b, f=f: f(b)) for name, f in cases(args.quick)]
    count = 20_000 if args.quick else 200_000
    rows.append((f"{count} gamma draws (shape 0.6)", lambda b: _gamma(b, count)))

    print(f"{'case':34s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}  identical")
    for name, fn in rows:
        tp, outp = best_of(lambda: fn("python"), args.repeat)
        tc, outc = best_of(lambda: fn("cython"), args.repeat)
        print(f"{name:34s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}x  {same(outp, outc)}")


if __name__ == "__main__":
    main()
