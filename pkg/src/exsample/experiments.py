"""Experiment drivers behind the command line: the simulation grid, the
estimator validation, oracle sweeps and run reports.

Everything here returns plain data and writes CSV bodies that depend only
on the configuration and seed; wall-clock information goes to a separate
``meta.json``.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import _backend
from .analysis import (
    checkpoint_grid,
    expected_weighted_curve,
    median_samples_to_recall,
    optimal_curve,
    percentile_bands,
)
from .belief import GammaBelief, gamma_quantile
from .core import BeliefParams, InvalidArgumentError, InvariantViolation, Policy, RngStream, partition_frames
from .estimator import expected_n1, expected_r_next, pow1m
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
from .simulation import (
    P_SIGMA_LOG,
    SpanDataset,
    bernoulli_hit_times,
    compute_p_matrix,
    gen_lognormal_durations,
    gen_lognormal_p,
    load_spans,
    place_spans,
    skew_sigma,
)

METHODS = ("exsample", "random", "sequential", "levelset")

TRAJECTORY_HEADER = ("rep", "sample_index", "distinct_found")
BANDS_HEADER = ("sample_index", "p25", "p50", "p75")
SAVINGS_HEADER = ("skew", "duration", "method", "recall", "median_samples", "savings_vs_random")
ALLOCATION_HEADER = ("chunk", "weight")
RUNS_HEADER = ("rep", "samples", "distinct_found", "exhausted")
ORACLE_HEADER = ("sample_index", "n_star_mean", "n_star_sd", "unconverged")
GAP_HEADER = ("sample_index", "n_star", "median", "gap")
OPTIMAL_HEADER = ("chunks", "n", "n_star", "uniform", "iterations", "final_gap", "converged")
ESTIMATOR_HEADER = (
    "n",
    "lambda",
    "mean_n1",
    "se_n1",
    "var_n1_over_n",
    "var_bound",
    "max_pi",
    "r_next_empirical",
    "r_next_analytic",
    "belief_p05",
    "belief_p95",
    "gof_statistic",
    "gof_pvalue",
)
GATES_HEADER = ("gate", "n", "statistic", "threshold", "passed")


class ConfigError(InvalidArgumentError):
    """Configuration file or value problem; carries a location hint."""


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    # dataset
    instances: int = 500
    total_frames: int = 1_000_000
    duration_mean: float = 700.0
    duration_scales: tuple = (1.0,)
    skews: tuple = (None,)
    spans_file: str | None = None
    # layout
    chunks: tuple = (64,)
    # samplers
    methods: tuple = METHODS
    alpha0: float = 0.1
    beta0: float = 1.0
    policy: Policy = Policy.THOMPSON
    batch: int = 1
    within: Within = Within.UNIFORM
    strict_global_once: bool = False
    stride: int = 30
    # run
    limit: object = field(default_factory=lambda: Recall(0.5))
    repetitions: int = 11
    seed: int = 0
    out: str = "runs/out"
    threads: int = 0
    recall_levels: tuple = (0.1, 0.5)
    checkpoints: int = 40
    extra_checkpoints: tuple = ()
    oracle: bool = True
    oracle_tol: float = 1e-6
    # optimal
    horizons: tuple = (10, 100, 1000, 10000)
    # validate-estimator
    v_instances: int = 1000
    v_target_mean: float = 3e-3
    v_sigma_log: float = P_SIGMA_LOG
    v_repetitions: int = 2000
    v_checkpoints: tuple = (10, 100, 1000, 10_000, 20_000)
    v_gof_max_pi: float = 0.01
    v_gof_alpha: float = 0.01

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("run.repetitions must be >= 1")
        if self.instances < 0:
            raise ConfigError("dataset.instances must be >= 0")
        if self.total_frames < 1:
            raise ConfigError("dataset.total_frames must be >= 1")
        for m in self.chunks:
            if not 1 <= m <= self.total_frames:
                raise ConfigError(f"layout.chunks entry {m} outside [1, total_frames]")
        for s in self.skews:
            if s is not None and not 0 < s <= 1:
                raise ConfigError(f"dataset.skews entry {s} outside (0, 1]")
        for name in self.methods:
            if name not in METHODS:
                raise ConfigError(f"sampler.methods: unknown method {name!r}")
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ConfigError("sampler.alpha0 and sampler.beta0 must be positive")
        if self.batch < 1 or self.stride < 1:
            raise ConfigError("sampler.batch and sampler.stride must be >= 1")
        if self.v_repetitions < 1:
            raise ConfigError("validate.repetitions must be >= 1")
        if any(n < 1 for n in self.v_checkpoints) or any(n < 1 for n in self.horizons):
            raise ConfigError("checkpoints and horizons must be >= 1")

    @property
    def params(self) -> BeliefParams:
        return BeliefParams(self.alpha0, self.beta0, self.policy)


_SECTIONS = {
    "dataset": {
        "instances": ("instances", int),
        "total_frames": ("total_frames", int),
        "duration_mean": ("duration_mean", float),
        "duration_scales": ("duration_scales", "floats"),
        "skews": ("skews", "skews"),
        "spans_file": ("spans_file", str),
    },
    "layout": {"chunks": ("chunks", "ints")},
    "sampler": {
        "methods": ("methods", "words"),
        "alpha0": ("alpha0", float),
        "beta0": ("beta0", float),
        "policy": ("policy", Policy),
        "batch": ("batch", int),
        "within": ("within", Within),
        "strict_global_once": ("strict_global_once", "bool"),
        "stride": ("stride", int),
    },
    "run": {
        "limit": ("limit", "limit"),
        "repetitions": ("repetitions", int),
        "seed": ("seed", int),
        "out": ("out", str),
        "threads": ("threads", int),
        "recall_levels": ("recall_levels", "floats"),
        "checkpoints": ("checkpoints", int),
        "extra_checkpoints": ("extra_checkpoints", "ints"),
        "oracle": ("oracle", "bool"),
        "oracle_tol": ("oracle_tol", float),
    },
    "optimal": {"horizons": ("horizons", "ints")},
    "validate": {
        "instances": ("v_instances", int),
        "target_mean": ("v_target_mean", float),
        "sigma_log": ("v_sigma_log", float),
        "repetitions": ("v_repetitions", int),
        "checkpoints": ("v_checkpoints", "ints"),
        "gof_max_pi": ("v_gof_max_pi", float),
        "gof_alpha": ("v_gof_alpha", float),
    },
}


def parse_limit(text: str):
    kind, _, value = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "recall":
            return Recall(float(value))
        if kind == "samples":
            return Samples(int(value))
        if kind == "results":
            return Results(int(value))
    except ValueError:
        pass
    raise ValueError("expected recall:<r>, samples:<k> or results:<k>")


def _parse_skew(tok: str):
    tok = tok.strip().lower()
    if tok in ("none", "uniform", "off"):
        return None
    return float(Fraction(tok))


def _convert(kind, raw: str):
    items = [t.strip() for t in raw.split(",") if t.strip()]
    if kind == "floats":
        return tuple(float(Fraction(t)) for t in items)
    if kind == "ints":
        return tuple(int(t.replace("_", "")) for t in items)
    if kind == "words":
        return tuple(items)
    if kind == "skews":
        return tuple(_parse_skew(t) for t in items)
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if kind == "limit":
        return parse_limit(raw)
    if kind is int:
        return int(raw.strip().replace("_", ""))
    return kind(raw.strip())


def load_config(path=None, text: str | None = None, **overrides) -> ExperimentConfig:
    """Read an INI-style config; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    name = str(path) if path is not None else "<config>"
    try:
        if text is None:
            if path is None:
                raise ConfigError("no configuration given")
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"{name}: cannot read ({exc.strerror})") from None
        parser.read_string(text, source=name)
    except configparser.Error as exc:
        raise ConfigError(f"{name}: {exc}".replace("\n", " ")) from None
    lines = text.splitlines()
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{name}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{name}:{_line_of(lines, key)}: unknown key {section}.{key}")
            attr, kind = _SECTIONS[section][key]
            try:
                values[attr] = _convert(kind, raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(
                    f"{name}:{_line_of(lines, key)}: bad value for {section}.{key} = {raw!r} ({exc})"
                ) from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _line_of(lines, key) -> int:
    for i, line in enumerate(lines, start=1):
        if line.split("=", 1)[0].strip().lower() == key:
            return i
    return 0


# --------------------------------------------------------------------------
# CSV helpers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return f"{v:.10g}"
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_meta(out: Path, command: str, cfg: ExperimentConfig, started: float) -> None:
    meta = {
        "command": command,
        "seed": cfg.seed,
        "backend": _backend.active(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "elapsed_seconds": round(time.time() - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def _threads(cfg: ExperimentConfig) -> int:
    if cfg.threads and cfg.threads > 0:
        return cfg.threads
    return os.cpu_count() or 1


def _pmap(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# simulation grid


@dataclass(frozen=True)
class Cell:
    skew: float | None
    scale: float
    chunks: int

    def skew_label(self) -> str:
        if self.skew is None:
            return "none"
        f = Fraction(self.skew).limit_denominator(10_000)
        return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)

    def key(self, cfg: ExperimentConfig) -> str:
        s = "none" if self.skew is None else self.skew_label().replace("/", "-")
        return f"skew-{s}_dur-{_fmt(cfg.duration_mean * self.scale)}_m-{self.chunks}"


def grid_cells(cfg: ExperimentConfig) -> list[Cell]:
    return [Cell(s, d, m) for s in cfg.skews for d in cfg.duration_scales for m in cfg.chunks]


def rep_stream(cfg: ExperimentConfig, rep: int) -> RngStream:
    return RngStream(cfg.seed, rep)


def build_dataset(cfg: ExperimentConfig, cell: Cell, rep: int) -> SpanDataset:
    """Span dataset for one repetition; identical across methods and chunk
    counts for the same (skew, duration, rep)."""
    if cfg.spans_file:
        return load_spans(cfg.spans_file)
    ds = rep_stream(cfg, rep).substream(0)
    lengths = gen_lognormal_durations(cfg.instances, cfg.duration_mean, ds.substream(0), scale=cell.scale)
    sigma = None if cell.skew is None else skew_sigma(cfg.total_frames, cell.skew)
    return place_spans(lengths, cfg.total_frames, sigma, ds.substream(1))


def run_method(cfg: ExperimentConfig, method: str, dataset, chunks: int, rep: int) -> Trajectory:
    rng = rep_stream(cfg, rep).substream(1)
    if method == "exsample":
        layout = partition_frames(dataset.total_frames, chunks)
        return run_exsample(
            dataset, layout, cfg.params, cfg.within, cfg.batch, cfg.limit, rng, cfg.strict_global_once
        )
    if method == "random":
        return run_random(dataset, cfg.limit, rng)
    if method == "levelset":
        return run_levelset_global(dataset, cfg.limit, rng)
    if method == "sequential":
        return run_sequential(dataset, cfg.stride, cfg.limit, rng)
    raise InvalidArgumentError(f"unknown method {method!r}")


def check_trajectory(traj: Trajectory) -> None:
    """Raise InvariantViolation if a run breaks the sampling contract."""
    cum = traj.cumulative()
    if cum.size and (cum[-1] > traj.n_instances or np.any(traj.new < 0)):
        raise InvariantViolation("distinct count decreased or exceeded the number of instances")
    if np.unique(traj.frame).size != traj.frame.size:
        raise InvariantViolation("a frame was sampled twice")
    if traj.chunk_n is not None and int(traj.chunk_n.sum()) != len(traj):
        raise InvariantViolation("per-chunk sample counts do not add up to the trajectory length")
    if traj.sightings is not None and traj.chunk_n1 is not None and traj.chunk_n1.size == 1:
        if int(traj.chunk_n1[0]) != int(np.count_nonzero(traj.sightings == 1)):
            raise InvariantViolation("single-chunk N1 differs from the once-seen count")


@dataclass
class MethodResult:
    method: str
    trajectories: list
    label: str


@dataclass
class CellResult:
    cell: Cell
    n_instances: int
    methods: list
    checkpoints: np.ndarray
    oracle_mean: np.ndarray | None = None
    oracle_sd: np.ndarray | None = None
    oracle_unconverged: np.ndarray | None = None
    oracle_per_rep: np.ndarray | None = None

    def method(self, name: str) -> MethodResult:
        for m in self.methods:
            if m.method == name:
                return m
        raise KeyError(name)


def _method_label(cfg: ExperimentConfig, method: str, chunks: int) -> str:
    if method == "exsample" and len(cfg.chunks) > 1:
        return f"exsample-m{chunks}"
    return method


def _checkpoints(cfg: ExperimentConfig, shortest: int) -> np.ndarray:
    grid = checkpoint_grid(shortest, cfg.checkpoints)
    extra = np.array([n for n in cfg.extra_checkpoints if 1 <= n <= shortest], dtype=np.int64)
    return np.unique(np.concatenate([grid, extra])).astype(np.int64)


def run_cell(cfg: ExperimentConfig, cell: Cell, threads: int = 1) -> CellResult:
    reps = list(range(cfg.repetitions))
    datasets = _pmap(lambda r: build_dataset(cfg, cell, r), reps, threads)
    n_inst = datasets[0].n_instances
    methods = []
    for name in cfg.methods:
        trajs = _pmap(lambda r: run_method(cfg, name, datasets[r], cell.chunks, r), reps, threads)
        for t in trajs:
            check_trajectory(t)
        methods.append(MethodResult(name, trajs, _method_label(cfg, name, cell.chunks)))
    lead = next((m for m in methods if m.method == "exsample"), methods[0])
    ns = _checkpoints(cfg, min(len(t) for t in lead.trajectories))
    res = CellResult(cell, n_inst, methods, ns)
    if cfg.oracle and ns.size and n_inst:
        def solve(r):
            P = compute_p_matrix(datasets[r], partition_frames(datasets[r].total_frames, cell.chunks))
            sols = optimal_curve(P, ns, tol=cfg.oracle_tol)
            return [s.expected_found for s in sols], [not s.converged for s in sols]

        out = _pmap(solve, reps, threads)
        vals = np.array([o[0] for o in out])
        res.oracle_per_rep = vals
        res.oracle_mean = vals.mean(axis=0)
        res.oracle_sd = vals.std(axis=0)
        res.oracle_unconverged = np.array([o[1] for o in out]).sum(axis=0)
    return res


def trajectory_rows(trajs):
    """Change points of each cumulative curve (plus the final sample)."""
    for rep, t in enumerate(trajs):
        cum = t.cumulative()
        if cum.size == 0:
            continue
        idx = np.flatnonzero(t.new)
        last = cum.size - 1
        if idx.size == 0 or idx[-1] != last:
            idx = np.append(idx, last)
        for i in idx.tolist():
            yield (rep, i + 1, int(cum[i]))


def cumulative_from_rows(rows, length: int) -> np.ndarray:
    """Rebuild a dense cumulative curve from change-point rows."""
    out = np.zeros(length, dtype=np.int64)
    prev_i, prev_v = 0, 0
    for i, v in rows:
        out[prev_i : i - 1] = prev_v
        out[i - 1] = v
        prev_i, prev_v = i, v
    out[prev_i:] = prev_v
    return out


def savings_rows(cfg: ExperimentConfig, results: list[CellResult]):
    for res in results:
        base = {}
        for r in cfg.recall_levels:
            base[r] = (
                median_samples_to_recall(res.method("random").trajectories, res.n_instances, r)
                if "random" in cfg.methods and res.n_instances
                else None
            )
        for m in res.methods:
            for r in cfg.recall_levels:
                med = median_samples_to_recall(m.trajectories, res.n_instances, r) if res.n_instances else None
                sv = base[r] / med if med is not None and base[r] is not None else None
                yield (
                    res.cell.skew_label(),
                    _fmt(cfg.duration_mean * res.cell.scale),
                    m.label,
                    r,
                    med,
                    sv,
                )


def simulate(cfg: ExperimentConfig, out=None) -> list[CellResult]:
    """Run the grid; write per-cell trajectories, bands, runs and oracle
    curves plus a top-level savings table when ``out`` is given."""
    started = time.time()
    threads = _threads(cfg)
    results = [run_cell(cfg, cell, threads) for cell in grid_cells(cfg)]
    if out is None:
        return results
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cells_index = []
    for res in results:
        key = res.cell.key(cfg)
        cdir = out / "cells" / key
        for m in res.methods:
            write_csv(cdir / f"{m.label}_trajectories.csv", TRAJECTORY_HEADER, trajectory_rows(m.trajectories))
            grid = _checkpoints(cfg, min(len(t) for t in m.trajectories))
            ns, bands = percentile_bands(m.trajectories, (25, 50, 75), grid)
            write_csv(cdir / f"{m.label}_bands.csv", BANDS_HEADER, zip(ns, *bands))
            write_csv(
                cdir / f"{m.label}_runs.csv",
                RUNS_HEADER,
                ((i, len(t), t.distinct_found, t.exhausted) for i, t in enumerate(m.trajectories)),
            )
        if res.oracle_mean is not None:
            write_csv(
                cdir / "oracle.csv",
                ORACLE_HEADER,
                zip(res.checkpoints, res.oracle_mean, res.oracle_sd, res.oracle_unconverged),
            )
        cell_info = {
            "key": key,
            "skew": res.cell.skew_label(),
            "duration": cfg.duration_mean * res.cell.scale,
            "chunks": res.cell.chunks,
            "instances": res.n_instances,
            "repetitions": cfg.repetitions,
            "methods": [m.label for m in res.methods],
            "lengths": {m.label: [len(t) for t in m.trajectories] for m in res.methods},
        }
        (cdir / "cell.json").write_text(json.dumps(cell_info, indent=1, sort_keys=True) + "\n")
        cells_index.append(key)
    write_csv(out / "savings.csv", SAVINGS_HEADER, savings_rows(cfg, results))
    run_info = {"cells": cells_index, "recall_levels": list(cfg.recall_levels), "seed": cfg.seed}
    (out / "run.json").write_text(json.dumps(run_info, indent=1, sort_keys=True) + "\n")
    write_meta(out, "simulate", cfg, started)
    return results


# --------------------------------------------------------------------------
# report over a finished run directory


def _load_curves(cdir: Path, label: str, lengths) -> list[np.ndarray]:
    by_rep: dict[int, list] = {r: [] for r in range(len(lengths))}
    for row in read_csv(cdir / f"{label}_trajectories.csv"):
        by_rep[int(row["rep"])].append((int(row["sample_index"]), int(row["distinct_found"])))
    return [cumulative_from_rows(by_rep[r], lengths[r]) for r in range(len(lengths))]


def _median_to_recall(curves, n_inst: int, r: float):
    k = math.ceil(r * n_inst - 1e-9)
    vals = []
    for c in curves:
        hit = np.flatnonzero(c >= k)
        vals.append(hit[0] + 1 if hit.size else math.inf)
    med = float(np.median(vals))
    return None if math.isinf(med) else med


def report(run_dir, out=None) -> dict:
    """Savings table and ExSample gap-to-oracle series from a run directory.

    Raises InvalidArgumentError if the directory is not a finished run.
    """
    run_dir = Path(run_dir)
    info_path = run_dir / "run.json"
    if not info_path.is_file():
        raise InvalidArgumentError(f"{run_dir}: not a completed run directory (run.json missing)")
    info = json.loads(info_path.read_text())
    out = Path(out) if out is not None else run_dir / "report"
    savings, gaps = [], {}
    for key in info["cells"]:
        cdir = run_dir / "cells" / key
        try:
            cell = json.loads((cdir / "cell.json").read_text())
            curves = {lab: _load_curves(cdir, lab, cell["lengths"][lab]) for lab in cell["methods"]}
        except (OSError, KeyError, ValueError) as exc:
            raise InvalidArgumentError(f"{cdir}: incomplete cell ({exc})") from None
        n_inst = cell["instances"]
        for r in info["recall_levels"]:
            base = _median_to_recall(curves["random"], n_inst, r) if "random" in curves and n_inst else None
            for lab in cell["methods"]:
                med = _median_to_recall(curves[lab], n_inst, r) if n_inst else None
                sv = base / med if base is not None and med is not None else None
                savings.append((cell["skew"], _fmt(cell["duration"]), lab, r, med, sv))
        oracle = cdir / "oracle.csv"
        ex = [lab for lab in cell["methods"] if lab.startswith("exsample")]
        if oracle.is_file() and ex:
            rows = read_csv(oracle)
            ns = np.array([int(r["sample_index"]) for r in rows])
            nstar = np.array([float(r["n_star_mean"]) for r in rows])
            med = np.median(np.vstack([c[ns - 1] for c in curves[ex[0]]]), axis=0)
            gap = nstar - med
            gaps[key] = (ns, nstar, med, gap)
            write_csv(out / f"gap_{key}.csv", GAP_HEADER, zip(ns, nstar, med, gap))
    savings.sort(key=lambda row: (row[0], float(row[1]), row[3], row[2]))
    write_csv(out / "savings.csv", SAVINGS_HEADER, savings)
    return {"savings": savings, "gaps": gaps}


# --------------------------------------------------------------------------
# estimator validation on the Bernoulli model


@dataclass
class CheckpointStats:
    n: int
    lam: float
    mean_n1: float
    se_n1: float
    var_ratio_terms: tuple  # (empirical Var[N1/n], bound E[N1]/n^2)
    max_pi: float
    r_next_empirical: float
    r_next_analytic: float
    belief: tuple
    gof: tuple | None  # (statistic, pvalue) or None when not applicable
    n1: np.ndarray = field(repr=False, default=None)


def poisson_gof(samples: np.ndarray, lam: float, min_expected: float = 5.0) -> tuple[float, float]:
    """Pearson chi-square of integer samples against Poisson(lam).

    Neighbouring counts are pooled from the tails inward until every bin
    expects at least ``min_expected`` observations; the two tails are open.
    """
    samples = np.asarray(samples, dtype=np.int64)
    reps = samples.size
    hi = int(max(samples.max(), sps.poisson.ppf(1 - 1e-12, lam))) + 1
    ks = np.arange(hi + 1)
    probs = sps.poisson.pmf(ks, lam)
    probs[-1] = sps.poisson.sf(hi - 1, lam)
    observed = np.bincount(np.minimum(samples, hi), minlength=hi + 1).astype(float)
    exp_bins, obs_bins = [], []
    acc_e = acc_o = 0.0
    for e, o in zip(probs * reps, observed):
        acc_e += e
        acc_o += o
        if acc_e >= min_expected:
            exp_bins.append(acc_e)
            obs_bins.append(acc_o)
            acc_e = acc_o = 0.0
    if acc_e > 0 or acc_o > 0:
        if exp_bins:
            exp_bins[-1] += acc_e
            obs_bins[-1] += acc_o
        else:
            exp_bins.append(acc_e)
            obs_bins.append(acc_o)
    if len(exp_bins) < 2:
        return 0.0, 1.0
    exp_arr, obs_arr = np.array(exp_bins), np.array(obs_bins)
    exp_arr *= obs_arr.sum() / exp_arr.sum()
    stat, pval = sps.chisquare(obs_arr, exp_arr)
    return float(stat), float(pval)


def validate_estimator(cfg: ExperimentConfig) -> list[CheckpointStats]:
    root = RngStream(cfg.seed, 0)
    if cfg.v_instances == 0:
        return [
            CheckpointStats(n, 0.0, 0.0, 0.0, (0.0, 0.0), 0.0, 0.0, 0.0, (0.0, 0.0), None, np.zeros(1))
            for n in cfg.v_checkpoints
        ]
    p = gen_lognormal_p(cfg.v_instances, cfg.v_target_mean, cfg.v_sigma_log, root.substream(0))
    t1, t2 = bernoulli_hit_times(p, cfg.v_repetitions, root.substream(1))
    params = cfg.params
    out = []
    for n in cfg.v_checkpoints:
        n1 = np.count_nonzero((t1 <= n) & (t2 > n), axis=1)
        lam = expected_n1(p, n)
        reps = n1.size
        mean = float(n1.mean())
        se = float(n1.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
        var_emp = float(n1.var(ddof=1) / n**2) if reps > 1 else 0.0
        pi = p * pow1m(p, n - 1)
        unseen = t1 > n
        r_emp = float(np.mean(unseen @ p))
        belief = GammaBelief(mean + params.alpha0, n + params.beta0)
        interval = (gamma_quantile(belief, 0.05), gamma_quantile(belief, 0.95))
        gof = poisson_gof(n1, lam) if pi.max() <= cfg.v_gof_max_pi else None
        out.append(
            CheckpointStats(
                n, lam, mean, se, (var_emp, lam / n**2), float(pi.max()), r_emp,
                expected_r_next(p, n), interval, gof, n1,
            )
        )
    return out


def estimator_gates(cfg: ExperimentConfig, rows: list[CheckpointStats]):
    """(gate, n, statistic, threshold, passed) tuples."""
    for r in rows:
        z = abs(r.mean_n1 - r.lam) / r.se_n1 if r.se_n1 > 0 else (0.0 if r.mean_n1 == r.lam else math.inf)
        yield ("mean_within_4se", r.n, z, 4.0, z <= 4.0)
        var_emp, bound = r.var_ratio_terms
        yield ("variance_bound", r.n, var_emp, 1.05 * bound, var_emp <= 1.05 * bound)
        if r.gof is not None:
            yield ("poisson_gof", r.n, r.gof[1], cfg.v_gof_alpha, r.gof[1] >= cfg.v_gof_alpha)


def write_validation(cfg: ExperimentConfig, rows, out) -> bool:
    started = time.time()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "estimator.csv",
        ESTIMATOR_HEADER,
        (
            (
                r.n, r.lam, r.mean_n1, r.se_n1, r.var_ratio_terms[0], r.var_ratio_terms[1], r.max_pi,
                r.r_next_empirical, r.r_next_analytic, r.belief[0], r.belief[1],
                None if r.gof is None else r.gof[0], None if r.gof is None else r.gof[1],
            )
            for r in rows
        ),
    )
    gates = list(estimator_gates(cfg, rows))
    write_csv(out / "gates.csv", GATES_HEADER, gates)
    write_meta(out, "validate-estimator", cfg, started)
    return all(g[4] for g in gates)


# --------------------------------------------------------------------------
# oracle sweeps


def optimal_sweep(cfg: ExperimentConfig, out=None, dataset=None):
    """N*(n) for every chunk count and horizon on one dataset.

    The dataset is the spans file if configured, otherwise repetition 0 of
    the first grid cell.
    """
    started = time.time()
    if dataset is None:
        dataset = build_dataset(cfg, grid_cells(cfg)[0], 0)
    horizons = np.asarray(cfg.horizons, dtype=np.int64)
    rows, weights = [], {}
    for m in cfg.chunks:
        layout = partition_frames(dataset.total_frames, m)
        P = compute_p_matrix(dataset, layout)
        sols = optimal_curve(P, horizons, tol=cfg.oracle_tol)
        for n, s in zip(horizons.tolist(), sols):
            uni = expected_weighted_curve(P, np.full(m, 1.0 / m), n) if dataset.n_instances else 0.0
            rows.append((m, n, s.expected_found, uni, s.iterations, s.final_gap, s.converged))
            weights[(m, n)] = s.w
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "optimal.csv", OPTIMAL_HEADER, rows)
        for (m, n), w in weights.items():
            write_csv(out / "allocations" / f"m{m}_n{n}.csv", ALLOCATION_HEADER, enumerate(w))
        write_meta(out, "optimal", cfg, started)
    return rows, weights
