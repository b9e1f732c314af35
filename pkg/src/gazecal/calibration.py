"""Reprojection-error cost over fixation clusters and its global minimisation.

For a candidate offset every cluster frame is calibrated, cast into the
scene, and the hit is projected onto the cluster's center camera. The
cluster cost is the mean squared deviation of those image points from
their mean. Clusters whose rays escape the scene (or land behind the center
camera) cost a flat penalty instead.

The optimiser is differential evolution (rand/1/bin) run independently in
each cell of a regular partition of the search box. All regions advance in
lockstep so a single kernel call scores every trial vector of a generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import AllInvalid, NoClusters
from .eye_model import MODES, CalibrationParams, as_direction
from .trace import as_trace, cumulative_distance

DEFAULT_PENALTY = 1.0
FLAT_REL_SPREAD = 1e-3


@dataclass(frozen=True)
class OptimizerConfig:
    bounds: tuple = ((-5.0, 5.0), (-5.0, 5.0))
    regions: int = 4  # per axis
    population_per_region: int = 16
    max_generations: int = 60
    de_weight: float = 0.8
    crossover: float = 0.9
    seed: int = 0
    penalty: float = DEFAULT_PENALTY
    tol: float = 1e-12  # stop a region once its population cost spread drops below

    def __post_init__(self):
        b = tuple(tuple(float(x) for x in ax) for ax in self.bounds)
        object.__setattr__(self, "bounds", b)
        if len(b) != 2 or any(len(ax) != 2 or not ax[0] < ax[1] for ax in b):
            raise ValueError("bounds must be two (low, high) pairs with low < high")
        if self.regions < 1:
            raise ValueError("need at least one region per axis")
        if self.population_per_region < 4:
            raise ValueError("rand/1 needs a population of at least 4")
        if self.max_generations < 0:
            raise ValueError("max_generations must be non-negative")
        if not 0 < self.de_weight <= 2:
            raise ValueError("de_weight must lie in (0, 2]")
        if not 0 <= self.crossover <= 1:
            raise ValueError("crossover must lie in [0, 1]")
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")

    @property
    def n_regions(self) -> int:
        return self.regions * self.regions

    def region_bounds(self) -> np.ndarray:
        """``(n_regions, 2, 2)`` array of ``[[a_lo, b_lo], [a_hi, b_hi]]``, row-major in alpha."""
        (a0, a1), (b0, b1) = self.bounds
        ea = np.linspace(a0, a1, self.regions + 1)
        eb = np.linspace(b0, b1, self.regions + 1)
        out = np.empty((self.n_regions, 2, 2))
        for i in range(self.regions):
            for j in range(self.regions):
                r = i * self.regions + j
                out[r, 0] = ea[i], eb[j]
                out[r, 1] = ea[i + 1], eb[j + 1]
        return out


@dataclass(frozen=True)
class ClusterCost:
    cluster_id: int
    cost: float  # E_j, or the penalty when invalid
    valid_frames: int
    invalid: bool = False


@dataclass(frozen=True)
class CostReport:
    theta: CalibrationParams
    total_cost: float
    per_cluster: tuple
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def n_invalid(self) -> int:
        return sum(c.invalid for c in self.per_cluster)

    def to_dict(self):
        return {
            "theta": [self.theta.alpha, self.theta.beta],
            "total_cost": self.total_cost,
            "per_cluster": [
                {"id": c.cluster_id, "cost": c.cost, "valid_frames": c.valid_frames,
                 "invalid": c.invalid} for c in self.per_cluster],
            "diagnostics": self.diagnostics,
        }


class ClusterSet:
    """Cluster frames packed back to back for the cost kernel."""

    def __init__(self, clusters, samples, scene, mode="opt"):
        clusters = list(clusters)
        if not clusters:
            raise NoClusters("no fixation clusters to optimise over")
        if mode not in MODES:
            raise ValueError(f"unknown gaze mode {mode!r}")
        trace = as_trace(samples)
        rows = np.concatenate([c.frame_indices for c in clusters])
        if rows.min() < 0 or rows.max() >= len(trace):
            raise IndexError("cluster frame index outside the trace")
        sizes = np.array([c.size for c in clusters], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        # center camera as a row of the packed arrays
        self.centers = np.array(
            [o + int(np.flatnonzero(c.frame_indices == c.center_index)[0])
             for o, c in zip(self.offsets[:-1], clusters)], dtype=np.int64)
        self.g = np.ascontiguousarray(as_direction(trace.g[rows]))
        self.rot = np.ascontiguousarray(trace.R[rows])
        self.pos = np.ascontiguousarray(trace.p[rows])
        # "opt" calibrates with M, "vis" with its transpose
        self.inverse = mode == "vis"
        self.scene = scene
        self.clusters = clusters

    def __len__(self):
        return len(self.clusters)

    def costs(self, thetas):
        """``(costs, valid)`` for a batch of parameters; invalid clusters are NaN."""
        thetas = np.ascontiguousarray(np.atleast_2d(np.asarray(thetas, dtype=float)))
        return _kernels.cluster_costs(thetas, self.inverse, self.g, self.rot, self.pos,
                                      self.offsets, self.centers, *self.scene.bvh)

    def totals(self, thetas, penalty=DEFAULT_PENALTY):
        """Summed cost per parameter row and whether any cluster was valid."""
        c, _ = self.costs(thetas)
        bad = np.isnan(c)
        return np.where(bad, penalty, c).sum(axis=1), ~bad.all(axis=1)

    def report(self, theta, penalty=DEFAULT_PENALTY) -> CostReport:
        theta = CalibrationParams.coerce(theta)
        c, valid = self.costs(theta.as_array()[None])
        per = []
        for j in range(len(self)):
            bad = bool(np.isnan(c[0, j]))
            per.append(ClusterCost(j, penalty if bad else float(c[0, j]), int(valid[0, j]), bad))
        return CostReport(theta, math.fsum(p.cost for p in per), tuple(per))


def cluster_cost(cluster, samples, scene, theta, mode="opt"):
    """Mean squared reprojection deviation of one cluster, or ``None`` if invalid."""
    c, _ = ClusterSet([cluster], samples, scene, mode).costs(CalibrationParams.coerce(theta).as_array())
    v = c[0, 0]
    return None if np.isnan(v) else float(v)


def total_cost(clusters, samples, scene, theta, mode="opt", penalty=DEFAULT_PENALTY) -> CostReport:
    """Sum of cluster costs; invalid clusters add ``penalty`` and are flagged."""
    return ClusterSet(clusters, samples, scene, mode).report(theta, penalty)


def grid_scan(clusters, samples, scene, alphas, betas, mode="opt", penalty=DEFAULT_PENALTY,
              chunk=4096):
    """Total cost on the grid ``alphas x betas``; result has shape ``(len(alphas), len(betas))``."""
    cs = clusters if isinstance(clusters, ClusterSet) else ClusterSet(clusters, samples, scene, mode)
    aa, bb = np.meshgrid(np.asarray(alphas, float), np.asarray(betas, float), indexing="ij")
    pts = np.stack([aa.ravel(), bb.ravel()], axis=1)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        out[s:s + chunk], _ = cs.totals(pts[s:s + chunk], penalty)
    return out.reshape(aa.shape)


def _lexbest(costs, thetas):
    """Index of the lowest cost; exact ties go to the lexicographically smaller theta."""
    return int(np.lexsort((thetas[:, 1], thetas[:, 0], costs))[0])


def differential_evolution(cs: ClusterSet, cfg: OptimizerConfig, regions=None):
    """Per-region DE search. Returns per-region ``(best_theta, best_cost)`` and run stats.

    ``regions`` restricts the search to a subset of region ids; each region
    draws from its own seeded stream, so its trajectory does not depend on
    which other regions run alongside it.
    """
    all_bounds = cfg.region_bounds()
    ids = np.arange(cfg.n_regions) if regions is None else np.asarray(regions, dtype=np.int64)
    lo = all_bounds[ids, 0][:, None, :]
    hi = all_bounds[ids, 1][:, None, :]
    nreg, npop = len(ids), cfg.population_per_region
    rngs = [np.random.default_rng([cfg.seed, int(r)]) for r in ids]

    pop = np.stack([lo[i, 0] + rngs[i].random((npop, 2)) * (hi[i, 0] - lo[i, 0]) for i in range(nreg)])
    cost, ok = cs.totals(pop.reshape(-1, 2), cfg.penalty)
    cost = cost.reshape(nreg, npop)
    any_valid = bool(ok.any())
    evals = nreg * npop
    gens = np.zeros(nreg, dtype=np.int64)
    diag = np.arange(npop)

    for _ in range(cfg.max_generations):
        active = np.flatnonzero(cost.max(axis=1) - cost.min(axis=1) >= cfg.tol)
        if len(active) == 0:
            break
        trials = np.empty((len(active), npop, 2))
        for n, i in enumerate(active):
            rng = rngs[i]
            keys = rng.random((npop, npop))
            keys[diag, diag] = np.inf
            a, b, c = np.argsort(keys, axis=1)[:, :3].T
            mutant = pop[i, a] + cfg.de_weight * (pop[i, b] - pop[i, c])
            mutant = np.clip(mutant, lo[i, 0], hi[i, 0])
            cross = rng.random((npop, 2)) < cfg.crossover
            cross[diag, rng.integers(0, 2, npop)] = True
            trials[n] = np.where(cross, mutant, pop[i])
        tcost, tok = cs.totals(trials.reshape(-1, 2), cfg.penalty)
        tcost = tcost.reshape(len(active), npop)
        any_valid |= bool(tok.any())
        evals += tcost.size
        for n, i in enumerate(active):
            better = tcost[n] <= cost[i]
            pop[i, better] = trials[n, better]
            cost[i, better] = tcost[n, better]
            gens[i] += 1

    best_theta = np.empty((nreg, 2))
    best_cost = np.empty(nreg)
    for i in range(nreg):
        k = _lexbest(cost[i], pop[i])
        best_theta[i] = pop[i, k]
        best_cost[i] = cost[i, k]
    stats = {"evaluations": int(evals), "generations": gens.tolist(), "any_valid": any_valid,
             "regions": ids.tolist()}
    return best_theta, best_cost, stats


def optimize(clusters, samples=None, scene=None, cfg: OptimizerConfig = OptimizerConfig(), mode="opt"):
    """Global minimiser of the summed cluster cost over the search box.

    ``clusters`` may be a prepared :class:`ClusterSet`. Returns
    ``(theta_hat, report)``; ``report.diagnostics`` carries the per-region
    optima and a flat-surface flag for traces that cannot constrain theta.
    """
    cs = clusters if isinstance(clusters, ClusterSet) else ClusterSet(clusters, samples, scene, mode)
    best_theta, best_cost, stats = differential_evolution(cs, cfg)
    if not stats["any_valid"]:
        raise AllInvalid("every candidate left all clusters invalid")
    k = _lexbest(best_cost, best_theta)
    theta = CalibrationParams(float(best_theta[k, 0]), float(best_theta[k, 1]))
    report = cs.report(theta, cfg.penalty)
    hi_c, lo_c = float(best_cost.max()), float(best_cost.min())
    rel = (hi_c - lo_c) / hi_c if hi_c > 0 else 0.0
    diagnostics = dict(stats)
    diagnostics.update({
        "region_best_theta": best_theta.tolist(),
        "region_best_cost": best_cost.tolist(),
        "cost_spread": hi_c - lo_c,
        "relative_cost_spread": rel,
        "flat_surface": bool(rel < FLAT_REL_SPREAD),
    })
    return theta, replace(report, diagnostics=diagnostics)


@dataclass(frozen=True)
class CalibrationResult:
    theta: CalibrationParams
    report: CostReport
    clusters: list
    distance_m: float

    def to_dict(self):
        d = self.report.to_dict()
        d.update({"theta_hat": [self.theta.alpha, self.theta.beta], "n_clusters": len(self.clusters),
                  "cumulative_distance_m": self.distance_m,
                  "clusters": [c.to_dict() for c in self.clusters]})
        return d


def self_calibrate(samples, scene, algo="IVDT3D", mode="opt", theta_det=(0.0, 0.0),
                   det_cfg=None, opt_cfg=OptimizerConfig()) -> CalibrationResult:
    """Detect fixations with ``theta_det`` and estimate the offset from them."""
    from .fixation import DetectorConfig, detect_fixations

    trace = as_trace(samples)
    clusters = detect_fixations(trace, algo, scene, theta_det, det_cfg or DetectorConfig(), mode)
    if not clusters:
        raise NoClusters("detector found no fixations")
    theta, report = optimize(clusters, trace, scene, opt_cfg, mode)
    dist = cumulative_distance(trace) if len(trace) else 0.0
    return CalibrationResult(theta, report, clusters, dist)
