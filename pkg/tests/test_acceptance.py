"""Acceptance gates, each at its stated tolerance and runtime budget.

Every test prints one ``[acceptance] <criterion>: PASS|FAIL`` line; the
lines are repeated in the pytest terminal summary.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import sparse, stats

from exsample import experiments as ex
from exsample.analysis import (
    AllocationProblem,
    allocation_gradient,
    allocation_objective,
    optimal_allocation,
)
from exsample.cli import main
from exsample.core import RngStream, partition_frames
from exsample.estimator import analytic_relative_bias, bias_upper_bounds, duration_stats
from exsample.sampler import Recall, run_exsample, run_random
from exsample.simulation import PMatrix, gen_lognormal_durations, place_spans, skew_sigma

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
MEDIAN_SE = math.sqrt(math.pi / 2)  # standard error of a median relative to that of a mean (normal data)


def _recall_samples(traj, n_inst, r=0.5):
    k = math.ceil(r * n_inst - 1e-9)
    hit = np.flatnonzero(traj.cumulative() >= k)
    return int(hit[0]) + 1 if hit.size else math.inf


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_bias_bounds(verdict):
    t0 = time.perf_counter()
    gen = np.random.default_rng(20_240_601)
    worst_low, worst_excess, cases = math.inf, -math.inf, 0
    for v in range(200):
        n_inst = int(gen.integers(1, 2001))
        kind = v % 3
        if kind == 0:  # lognormal
            p = np.exp(gen.normal(math.log(1e-3), 1.5, n_inst))
        elif kind == 1:  # uniform
            p = gen.uniform(1e-6, 0.2, n_inst)
        else:  # mix of both
            k = int(gen.integers(0, n_inst + 1))
            p = np.concatenate([np.exp(gen.normal(math.log(1e-3), 1.5, k)), gen.uniform(1e-6, 0.2, n_inst - k)])
        p = np.clip(p, 1e-9, 0.5)
        bound = min(bias_upper_bounds(duration_stats(p), n_inst))
        for n in (1, 10, 1_000, 100_000):
            b = analytic_relative_bias(p, n)
            worst_low = min(worst_low, b)
            worst_excess = max(worst_excess, b - bound)
            cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst_low >= -1e-12 and worst_excess <= 1e-9 and elapsed < 10
    verdict(
        "criterion 1 (estimator bias bounds)",
        ok,
        f"{cases} cases, min bias {worst_low:.3g}, max(bias - bound) {worst_excess:.3g}, {elapsed:.1f}s (< 10s)",
    )
    assert ok


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_estimator_validation(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = ex.load_config(CONFIGS / "validate.ini")
    rows = ex.validate_estimator(cfg)
    ex.write_validation(cfg, rows, tmp_path)
    elapsed = time.perf_counter() - t0
    gates = list(ex.estimator_gates(cfg, rows))
    parts, ok = [], elapsed < 300
    for label, name in (("a", "mean_within_4se"), ("b", "variance_bound"), ("c", "poisson_gof")):
        sel = [g for g in gates if g[0] == name]
        passed = bool(sel) and all(g[4] for g in sel)
        ok &= passed
        failed = [g[1] for g in sel if not g[4]]
        parts.append(f"({label}) {'ok' if passed else 'fails at n=' + str(failed) if sel else 'no checkpoint'}")
        for g in sel:
            print(f"  {name} n={g[1]} statistic={g[2]:.6g} threshold={g[3]:.6g} {'pass' if g[4] else 'FAIL'}")
    verdict("criterion 2 (estimator Monte Carlo)", ok, f"{'; '.join(parts)}; {elapsed:.0f}s (< 300s)")
    assert ok


# -- 3 and 7 share the desk-scale grid ------------------------------------------


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    timings = []
    for name in ("a", "b"):
        t0 = time.perf_counter()
        rc = main(["simulate", "--config", str(CONFIGS / "desk.ini"), "--out", str(root / name)])
        timings.append(time.perf_counter() - t0)
        assert rc == 0
    return root, timings


def test_criterion_3_simulation_grid(verdict, desk_runs):
    root, timings = desk_runs
    cfg = ex.load_config(CONFIGS / "desk.ini")
    t0 = time.perf_counter()
    results = ex.simulate(cfg)  # in memory, for the oracle per repetition
    elapsed = timings[0]
    ok_a = ok_b = ok_c = True
    notes_a, notes_b, worst_c = [], [], -math.inf
    for res in results:
        n = res.n_instances
        exs = res.method("exsample").trajectories
        rnd = res.method("random").trajectories
        med_e = np.median([_recall_samples(t, n) for t in exs])
        med_r = np.median([_recall_samples(t, n) for t in rnd])
        dur = cfg.duration_mean * res.cell.scale
        if res.cell.skew is None:
            ratio = med_e / med_r
            ok_a &= ratio <= 1.15
            notes_a.append(f"{dur:g}:{ratio:.3f}")
        elif res.cell.skew == 1 / 32 and dur >= 70:
            sv = med_r / med_e
            ok_b &= sv >= 2.0
            notes_b.append(f"{dur:g}:{sv:.1f}x")
        ns = res.checkpoints
        curves = np.array([t.cumulative()[ns - 1] for t in exs])
        sigma = np.sqrt(
            (MEDIAN_SE**2 * curves.var(axis=0, ddof=1) + res.oracle_per_rep.var(axis=0, ddof=1)) / len(exs)
        )
        excess = np.median(curves, axis=0) - (res.oracle_mean + 3 * sigma)
        worst_c = max(worst_c, float(excess.max()))
        ok_c &= bool(np.all(excess <= 0))
    ok = ok_a and ok_b and ok_c and elapsed < 600
    verdict(
        "criterion 3 (desk simulation grid)",
        ok,
        f"(a) exsample/random at r=0.5 no skew {notes_a}; (b) savings skew 1/32 {notes_b}; "
        f"(c) max excess over N*+3sigma {worst_c:.3g}; {elapsed:.0f}s (< 600s)",
    )
    assert ok


def test_criterion_7_determinism(verdict, desk_runs):
    root, _ = desk_runs
    a = {p.relative_to(root / "a"): p.read_bytes() for p in sorted((root / "a").rglob("*.csv"))}
    b = {p.relative_to(root / "b"): p.read_bytes() for p in sorted((root / "b").rglob("*.csv"))}
    differing = [str(k) for k in a if a[k] != b.get(k)]
    ok = bool(a) and a.keys() == b.keys() and not differing
    verdict("criterion 7 (determinism)", ok, f"{len(a)} CSV files compared, {len(differing)} differ")
    assert ok


# -- 4 ------------------------------------------------------------------------


def test_criterion_4_chunks_study(verdict):
    t0 = time.perf_counter()
    cfg = ex.load_config(CONFIGS / "chunks.ini")
    results = ex.simulate(cfg)
    elapsed = time.perf_counter() - t0
    n_inst = results[0].n_instances

    # (a) refinement: the per-repetition oracle is nondecreasing in M on common horizons
    common = set(results[0].checkpoints.tolist())
    for res in results[1:]:
        common &= set(res.checkpoints.tolist())
    common = np.array(sorted(common))
    stack = []
    for res in sorted(results, key=lambda r: r.cell.chunks):
        idx = np.searchsorted(res.checkpoints, common)
        stack.append(res.oracle_per_rep[:, idx])
    worst_drop = max(float((prev - cur).max()) for prev, cur in zip(stack, stack[1:]))
    ok_a = worst_drop <= 1e-6 * n_inst

    # (b) where the oracle-vs-exsample gap peaks
    ok_b, notes = True, []
    for res in sorted(results, key=lambda r: r.cell.chunks):
        m = res.cell.chunks
        ns = res.checkpoints
        curves = np.array([t.cumulative()[ns - 1] for t in res.method("exsample").trajectories])
        gap = res.oracle_mean - np.median(curves, axis=0)
        k = int(np.argmax(gap))
        at20 = gap[int(np.flatnonzero(ns == 20 * m)[0])] if np.any(ns == 20 * m) else math.nan
        here = m / 4 <= ns[k] <= 4 * m and at20 < gap[k]
        ok_b &= bool(here)
        notes.append(f"M={m}: peak n={ns[k]} gap={gap[k]:.1f}, gap(20M)={at20:.1f} {'ok' if here else 'FAIL'}")
    ok = ok_a and ok_b and elapsed < 600
    verdict(
        "criterion 4 (chunks study)",
        ok,
        f"(a) worst N* decrease with more chunks {worst_drop:.3g} (slack {1e-6 * n_inst:.1g}); "
        f"(b) {'; '.join(notes)}; {elapsed:.0f}s (< 600s)",
    )
    assert ok


# -- 5 ------------------------------------------------------------------------


def test_criterion_5_equivalence(verdict):
    t0 = time.perf_counter()
    F, n_inst = 1_000_000, 500

    def dataset(r, skew):
        ds = RngStream(5, r).substream(0)
        lengths = gen_lognormal_durations(n_inst, 700, ds.substream(0))
        sigma = None if skew is None else skew_sigma(F, skew)
        return place_spans(lengths, F, sigma, ds.substream(1))

    # M=1 ExSample and random sampling should be the same process
    one = partition_frames(F, 1)
    ex1, rnd = [], []
    for r in range(200):
        ds = dataset(r, None)
        ex1.append(_recall_samples(run_exsample(ds, one, limit=Recall(0.5), rng=RngStream(5, r).substream(1)), n_inst))
        rnd.append(_recall_samples(run_random(ds, Recall(0.5), RngStream(5, r).substream(2)), n_inst))
    ks = stats.ks_2samp(ex1, rnd)
    ok_ks = ks.pvalue >= 0.05

    # batching 50 frames per decision costs little: every desk-grid cell
    cfg = ex.load_config(CONFIGS / "desk.ini")
    rels = []
    for cell in ex.grid_cells(cfg):
        b1, b50 = [], []
        for r in range(51):
            ds = ex.build_dataset(cfg, cell, r)
            layout = partition_frames(ds.total_frames, cell.chunks)
            rng = RngStream(6, r)
            b1.append(_recall_samples(run_exsample(ds, layout, limit=Recall(0.5), rng=rng.substream(1)), n_inst))
            b50.append(
                _recall_samples(run_exsample(ds, layout, batch=50, limit=Recall(0.5), rng=rng.substream(2)), n_inst)
            )
        rels.append((cell, float(np.median(b50) / np.median(b1) - 1), float(np.median(b1))))
    ok_b = all(abs(rel) <= 0.15 for _, rel, _ in rels)
    worst = max(rels, key=lambda x: abs(x[1]))
    for cell, rel, med in rels:
        print(f"  B=50 vs B=1 skew={cell.skew_label()} duration={cfg.duration_mean * cell.scale:g}: "
              f"{rel:+.1%} (B=1 median {med:g} samples)")
    elapsed = time.perf_counter() - t0
    ok = ok_ks and ok_b and elapsed < 300
    verdict(
        "criterion 5 (equivalence gates)",
        ok,
        f"M=1 vs random KS p={ks.pvalue:.3f} (>= 0.05); median B=50 vs B=1 within 15% in "
        f"{sum(abs(x[1]) <= 0.15 for x in rels)}/{len(rels)} desk cells, worst {worst[1]:+.1%} "
        f"(skew {worst[0].skew_label()}, duration {cfg.duration_mean * worst[0].scale:g}); "
        f"{elapsed:.0f}s (< 300s)",
    )
    assert ok


# -- 6 ------------------------------------------------------------------------


def _random_problem(gen, n_inst, m):
    dense = gen.random((n_inst, m)) * (gen.random((n_inst, m)) < 0.4) * 0.3
    return PMatrix(sparse.csr_array(dense), np.ones(m, dtype=np.int64))


def test_criterion_6_solver_gates(verdict):
    t0 = time.perf_counter()
    gen = np.random.default_rng(66)
    worst_dom = -math.inf
    for _ in range(100):
        m = int(gen.integers(1, 17))
        P = _random_problem(gen, int(gen.integers(1, 80)), m)
        n = int(gen.integers(1, 2000))
        sol = optimal_allocation(AllocationProblem(P, n))
        worst_dom = max(worst_dom, allocation_objective(P, sol.w, n) - allocation_objective(P, np.full(m, 1 / m), n))
    ok_dom = worst_dom <= 0.0

    worst_sym = 0.0
    for m in (2, 5, 8, 32):
        col = gen.random(50) * 0.05
        P = PMatrix(sparse.csr_array(np.tile(col[:, None], (1, m))), np.ones(m, dtype=np.int64))
        for n in (1, 30, 3000):
            worst_sym = max(worst_sym, float(np.abs(optimal_allocation(AllocationProblem(P, n)).w - 1 / m).max()))
    ok_sym = worst_sym <= 1e-6

    worst_fd = 0.0
    for _ in range(30):
        m = int(gen.integers(2, 9))
        P = _random_problem(gen, 30, m)
        n = int(gen.integers(2, 300))
        w = optimal_allocation(AllocationProblem(P, n)).w
        w = 0.9 * w + 0.1 / m
        g = allocation_gradient(P, w, n)
        h = 1e-6
        fd = np.array(
            [(allocation_objective(P, w + h * e, n) - allocation_objective(P, w - h * e, n)) / (2 * h) for e in np.eye(m)]
        )
        scale = np.maximum(np.abs(g), 1e-9 * max(1.0, float(np.abs(g).max())))
        worst_fd = max(worst_fd, float((np.abs(g - fd) / scale).max()))
    ok_fd = worst_fd <= 1e-5
    elapsed = time.perf_counter() - t0
    ok = ok_dom and ok_sym and ok_fd and elapsed < 60
    verdict(
        "criterion 6 (solver gates)",
        ok,
        f"max objective(w*) - objective(uniform) {worst_dom:.3g}; symmetric max |w - 1/M| {worst_sym:.2g}; "
        f"gradient rel. error {worst_fd:.2g}; {elapsed:.1f}s (< 60s)",
    )
    assert ok
