"""Experiment drivers: accuracy, convergence by distance, detection-parameter dependence.

Every trial is one self-calibration. Trials fan out over a thread pool
(the numba kernels release the GIL) and are gathered back in task order,
so reports depend only on the spec and its seed.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baseline import offset_error
from .calibration import ClusterSet, OptimizerConfig, optimize
from .errors import DataError
from .fixation import Algo, DetectorConfig, detect_fixations
from .synth import WalkSpec, random_script, simulate
from .trace import distance_profile

EXPERIMENTS = ("accuracy", "convergence", "param_dependence")


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str = "accuracy"
    algos: tuple = ("IVT", "IDT3D", "IVDT3D")
    modes: tuple = ("opt",)
    distances: tuple = tuple(range(3, 35))
    ranges: tuple = (1, 2, 3, 4, 5)
    thetas_per_range: int = 50
    n_traces: int = 3
    noise_std_deg: float = 0.0
    seed: int = 0
    walk: WalkSpec = field(default_factory=WalkSpec)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        object.__setattr__(self, "algos", tuple(Algo.parse(a).value for a in self.algos))
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))
        object.__setattr__(self, "ranges", tuple(int(r) for r in self.ranges))
        if not self.algos or not self.modes:
            raise ValueError("algorithm and mode sets must be non-empty")
        if self.experiment == "convergence" and not self.distances:
            raise ValueError("distance grid must be non-empty")
        if self.experiment == "param_dependence":
            if not self.ranges or min(self.ranges) < 1:
                raise ValueError("ranges must be non-empty and start at 1")
            if self.thetas_per_range < 1:
                raise ValueError("need at least one theta per range")
        for m in self.modes:
            if m not in ("opt", "vis"):
                raise ValueError(f"unknown gaze mode {m!r}")

    def to_dict(self):
        d = asdict(self)
        d["walk"] = asdict(self.walk)
        d["detector"] = asdict(self.detector)
        d["optimizer"] = asdict(self.optimizer)
        return d


@dataclass
class Trial:
    condition: str
    trace: int
    algo: str
    mode: str
    distance_m: float
    range_: int | None = None
    theta_det: tuple = (0.0, 0.0)
    theta_hat: tuple | None = None
    true_offset: tuple | None = None
    error_deg: float | None = None
    abs_alpha: float | None = None
    abs_beta: float | None = None
    n_clusters: int = 0
    failure: str | None = None


def range_offsets(level, count, rng) -> np.ndarray:
    """``count`` offsets with ``level - 1 <= max(|da|, |db|) <= level``."""
    out = []
    while len(out) < count:
        d = rng.uniform(-level, level, size=2)
        if np.max(np.abs(d)) >= level - 1:
            out.append(d)
    return np.array(out)


def synthetic_traces(scene, spec: ExperimentSpec, modes=None):
    """One simulated trace per (index, mode), sharing a seeded true offset."""
    traces = {}
    for i in range(spec.n_traces):
        for mode in modes or spec.modes:
            script = random_script(scene, seed=spec.seed * 1000 + i, mode=mode,
                                   noise_std_deg=spec.noise_std_deg, spec=spec.walk)
            traces[i, mode] = simulate(script)
    return traces


class _Solver:
    """Detection plus optimization, memoized on the detected cluster set."""

    def __init__(self, scene, spec: ExperimentSpec):
        self.scene = scene
        self.spec = spec
        self.cache = {}

    def run(self, trial: Trial, trace, true_offset):
        clusters = detect_fixations(trace, trial.algo, self.scene, trial.theta_det,
                                    self.spec.detector, trial.mode)
        trial.n_clusters = len(clusters)
        key = (id(trace), len(trace), trial.mode, tuple(clusters))
        theta = self.cache.get(key)
        if theta is None:
            theta, _ = optimize(ClusterSet(clusters, trace, self.scene, trial.mode),
                                cfg=self.spec.optimizer, mode=trial.mode)
            self.cache[key] = theta
        trial.theta_hat = tuple(theta)
        trial.true_offset = tuple(true_offset)
        trial.error_deg = offset_error(theta, true_offset, trial.mode)
        trial.abs_alpha = abs(theta.alpha - true_offset.alpha)
        trial.abs_beta = abs(theta.beta - true_offset.beta)
        return trial


def _tasks(spec: ExperimentSpec, traces):
    rng = np.random.default_rng([spec.seed, 17])
    tasks = []
    for (i, mode), trace in traces.items():
        profile = distance_profile(trace)
        total = float(profile[-1])
        for algo in spec.algos:
            if spec.experiment == "accuracy":
                tasks.append((Trial(f"{algo}/{mode}", i, algo, mode, total), trace))
            elif spec.experiment == "convergence":
                for d in spec.distances:
                    trial = Trial(f"{algo}/{mode}/{d:g}m", i, algo, mode, d)
                    if d > total + 1e-9:
                        trial.failure = f"trace covers only {total:.2f} m"
                        tasks.append((trial, None))
                        continue
                    n = int(np.searchsorted(profile, d - 1e-9)) + 1
                    tasks.append((trial, trace.prefix(n)))
            else:
                for level in spec.ranges:
                    for k, delta in enumerate(range_offsets(level, spec.thetas_per_range, rng)):
                        theta = trace.truth.true_offset.as_array() + delta
                        tasks.append((Trial(f"{algo}/{mode}/range{level}", i, algo, mode, total,
                                            level, tuple(theta.tolist())), trace))
    return tasks


def run_trials(scene, spec: ExperimentSpec, traces=None, threads=1):
    """Run every trial of the spec; failures are recorded, not raised."""
    if traces is None:
        traces = synthetic_traces(scene, spec)
    solver = _Solver(scene, spec)
    tasks = _tasks(spec, traces)

    def work(item):
        trial, trace = item
        if trace is None:
            return trial
        truth = trace.truth
        if truth is None:
            trial.failure = "trace has no ground truth"
            return trial
        try:
            return solver.run(trial, trace, truth.true_offset)
        except DataError as exc:
            trial.failure = f"{type(exc).__name__}: {exc}"
            return trial

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, tasks))
    return [work(t) for t in tasks]


def summarize(trials):
    """Per-condition rows in first-seen order."""
    groups = {}
    for t in trials:
        groups.setdefault(t.condition, []).append(t)
    rows = []
    for cond, ts in groups.items():
        ok = [t for t in ts if t.failure is None]
        err = np.array([t.error_deg for t in ok])
        rows.append({
            "condition": cond,
            "mean_error_deg": float(err.mean()) if len(err) else math.nan,
            "std_error_deg": float(err.std()) if len(err) else math.nan,
            "median_error_deg": float(np.median(err)) if len(err) else math.nan,
            "n_clusters": float(np.mean([t.n_clusters for t in ok])) if ok else math.nan,
            "distance_m": float(np.mean([t.distance_m for t in ts])),
            "n_trials": len(ts),
            "n_failed": len(ts) - len(ok),
        })
    return rows


def _csv(rows, columns):
    buf = _io.StringIO()
    w = csv.DictWriter(buf, columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


TRIAL_COLUMNS = ["condition", "trace", "algo", "mode", "distance_m", "range_", "theta_det",
                 "theta_hat", "true_offset", "error_deg", "abs_alpha", "abs_beta", "n_clusters",
                 "failure"]
SUMMARY_COLUMNS = ["condition", "mean_error_deg", "std_error_deg", "median_error_deg",
                   "n_clusters", "distance_m", "n_trials", "n_failed"]


def write_report(spec: ExperimentSpec, trials, out_dir) -> dict:
    """Write ``<experiment>.csv``, ``<experiment>_trials.csv`` and ``<experiment>.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = summarize(trials)
    name = spec.experiment
    (out / f"{name}.csv").write_text(_csv(rows, SUMMARY_COLUMNS))
    (out / f"{name}_trials.csv").write_text(_csv([asdict(t) for t in trials], TRIAL_COLUMNS))
    summary = {
        "spec": spec.to_dict(),
        "partial": any(t.failure for t in trials),
        "conditions": rows,
        "failures": [{"condition": t.condition, "trace": t.trace, "reason": t.failure}
                     for t in trials if t.failure],
    }
    (out / f"{name}.json").write_text(json.dumps(summary, indent=1, default=str) + "\n")
    return summary


def run_experiment(spec: ExperimentSpec, scene, out_dir=None, traces=None, threads=1):
    trials = run_trials(scene, spec, traces, threads)
    if out_dir is not None:
        return write_report(spec, trials, out_dir), trials
    return {"conditions": summarize(trials), "partial": any(t.failure for t in trials)}, trials
