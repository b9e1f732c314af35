import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gazecal.calibration import (ClusterSet, OptimizerConfig, cluster_cost, differential_evolution,
                                 grid_scan, optimize, self_calibrate, total_cost)
from gazecal.errors import AllInvalid, NoClusters
from gazecal.eye_model import uncalibrate
from gazecal.fixation import FixationCluster, detect_fixations, select_center_camera
from gazecal.geometry import rotation_about
from gazecal.scene import SceneModel, quad_mesh
from gazecal.synth import WalkSpec, random_script, simulate
from gazecal.trace import Trace, cumulative_distance
from oracles import brute_cluster_cost

SMALL = OptimizerConfig(regions=2, population_per_region=8, max_generations=15)


@pytest.fixture(scope="module")
def wall():
    v, f = quad_mesh([(-50, -50, 3), (50, -50, 3), (50, 50, 3), (-50, 50, 3)])
    return SceneModel(v, f)


@pytest.fixture(scope="module")
def small_wall():
    """A 2 m x 2 m panel: rays escape it under large offsets."""
    v, f = quad_mesh([(-1, -1, 3), (1, -1, 3), (1, 1, 3), (-1, 1, 3)])
    return SceneModel(v, f)


def make_trace(g, p=None, R=None):
    n = len(g)
    R = np.repeat(np.eye(3)[None], n, axis=0) if R is None else np.asarray(R, float)
    p = np.zeros((n, 3)) if p is None else np.asarray(p, float)
    return Trace(np.arange(n) / 50.0, g, R, p, np.ones(n))


def pursuit(theta, n=25, travel=0.5, target=(0.2, 0.1, 3.0), mode="opt", start=0.0):
    """Head sliding sideways while the visual axis stays on one wall point."""
    p = np.c_[np.linspace(start, start + travel, n), np.zeros(n), np.zeros(n)]
    vis = np.asarray(target) - p
    raw = uncalibrate(vis / vis[:, 2:], theta, mode)
    return make_trace(raw[:, :2] / raw[:, 2:], p)


def whole(trace, theta, mode="opt"):
    return FixationCluster(np.arange(len(trace)), select_center_camera(trace, theta, mode))


@pytest.fixture(scope="module")
def room_trace(room):
    tr = simulate(random_script(room, 1, true_offset=(2.0, -1.5),
                                spec=WalkSpec(distance_m=8, speed_mps=1.1)))
    return tr, detect_fixations(tr, "IVDT3D", room, (2.0, -1.5))


# -- cluster cost -------------------------------------------------------------

def test_converging_cluster_costs_zero(wall):
    tr = make_trace(np.full((8, 2), 0.1))
    assert cluster_cost(whole(tr, (0, 0)), tr, wall, (0, 0)) == 0.0


def test_two_point_variance(plane_z2):
    tr = make_trace(np.array([[0.0, 0.0], [0.02, 0.0]]))
    assert abs(cluster_cost(FixationCluster([0, 1], 0), tr, plane_z2, (0, 0)) - 1e-4) < 1e-15


@pytest.mark.parametrize("mode", ["opt", "vis"])
def test_cost_matches_brute_force(wall, mode):
    theta = np.array([1.3, -0.7])
    tr = pursuit(theta, mode=mode)
    c = whole(tr, theta, mode)
    assert cluster_cost(c, tr, wall, theta, mode) < 1e-20
    for delta in ([1, 0], [0, 1], [-2.5, 3.0]):
        th = theta + delta
        got = cluster_cost(c, tr, wall, th, mode)
        ref = brute_cluster_cost(tr.g, tr.R, tr.p, c.center_index, wall.vertices, wall.triangles,
                                 th[0], th[1], mode)
        assert got > 0
        assert abs(got - ref) <= 1e-9 * ref


def test_cost_matches_brute_force_in_room(room, room_trace):
    tr, clusters = room_trace
    c = clusters[3]
    rows = c.frame_indices
    for th in ([2.0, -1.5], [3.0, -1.5], [-4.0, 4.0]):
        got = cluster_cost(c, tr, room, th)
        ref = brute_cluster_cost(tr.g[rows], tr.R[rows], tr.p[rows], c.center_index - c.start,
                                 room.vertices, room.triangles, th[0], th[1])
        assert abs(got - ref) <= 1e-9 * max(ref, 1e-12) + 1e-18


def test_miss_is_invalid(small_wall):
    tr = pursuit((0, 0), target=(0.9, 0.0, 3.0))
    c = whole(tr, (0, 0))
    assert cluster_cost(c, tr, small_wall, (0, 0)) is not None
    assert cluster_cost(c, tr, small_wall, (5, 0)) is None  # pushed past the panel edge
    rep = total_cost([c], tr, small_wall, (5, 0), penalty=2.5)
    assert rep.total_cost == 2.5 and rep.n_invalid == 1 and rep.per_cluster[0].invalid


# -- total cost ---------------------------------------------------------------

def test_total_is_sum(wall):
    a = pursuit((1, 1), n=12)
    b = pursuit((1, 1), n=12, target=(-0.4, 0.2, 3.0), start=0.5)
    tr = Trace(np.arange(24) / 50.0, np.r_[a.g, b.g], np.r_[a.R, b.R], np.r_[a.p, b.p], np.ones(24))
    ca = FixationCluster(np.arange(12), select_center_camera(a, (1, 1)))
    cb = FixationCluster(np.arange(12, 24), 12 + select_center_camera(b, (1, 1)))
    th = (0.0, 2.0)
    one = total_cost([ca], tr, wall, th)
    assert one.total_cost == cluster_cost(ca, tr, wall, th)
    both = total_cost([ca, cb], tr, wall, th)
    assert both.total_cost == pytest.approx(cluster_cost(ca, tr, wall, th) + cluster_cost(cb, tr, wall, th),
                                            rel=1e-12)
    assert [c.valid_frames for c in both.per_cluster] == [12, 12]


def test_no_clusters(wall):
    with pytest.raises(NoClusters):
        total_cost([], make_trace(np.zeros((3, 2))), wall, (0, 0))


def test_truth_beats_coarse_grid(room, room_trace):
    tr, clusters = room_trace
    truth = np.array([2.0, -1.5])
    at_truth = total_cost(clusters, tr, room, truth).total_cost
    axis = np.linspace(-5, 5, 21)
    grid = grid_scan(clusters, tr, room, axis, axis)
    aa, bb = np.meshgrid(axis, axis, indexing="ij")
    far = np.hypot(aa - truth[0], bb - truth[1]) >= 0.5
    assert np.all(at_truth < grid[far])


def test_grid_scan_matches_total_cost(room, room_trace):
    tr, clusters = room_trace
    g = grid_scan(clusters, tr, room, [-1.0, 2.0], [0.5, -1.5])
    for i, a in enumerate([-1.0, 2.0]):
        for j, b in enumerate([0.5, -1.5]):
            assert g[i, j] == pytest.approx(total_cost(clusters, tr, room, (a, b)).total_cost, rel=1e-12)


# -- optimiser ----------------------------------------------------------------

def test_recovers_known_offset(room, room_trace):
    tr, clusters = room_trace
    theta, report = optimize(clusters, tr, room)
    assert abs(theta.alpha - 2.0) < 0.1 and abs(theta.beta + 1.5) < 0.1
    assert report.theta == theta
    assert not report.diagnostics["flat_surface"]


@pytest.mark.parametrize("seed", [3, 4])
def test_oracle_minimality(room, seed):
    rng = np.random.default_rng(seed)
    truth = rng.uniform(-4.5, 4.5, 2)
    tr = simulate(random_script(room, seed, true_offset=truth, spec=WalkSpec(distance_m=5, speed_mps=1.1)))
    cs = ClusterSet(detect_fixations(tr, "IVDT3D", room, truth), tr, room)
    axis = np.linspace(-5, 5, 201)
    grid = grid_scan(cs, None, None, axis, axis)
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    assert abs(axis[i] - truth[0]) <= 0.1 and abs(axis[j] - truth[1]) <= 0.1
    theta, _ = optimize(cs, cfg=OptimizerConfig(seed=seed))
    assert abs(theta.alpha - axis[i]) <= 0.1 and abs(theta.beta - axis[j]) <= 0.1


def test_unimodal_matches_fine_grid(wall):
    tr = pursuit((2.0, -1.5), n=40, travel=2.0)
    cs = ClusterSet([whole(tr, (0, 0))], tr, wall)
    axis = np.linspace(-5, 5, 201)
    grid = grid_scan(cs, None, None, axis, axis)
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    theta, _ = optimize(cs)
    assert abs(theta.alpha - axis[i]) <= 0.05 and abs(theta.beta - axis[j]) <= 0.05


def test_flat_surface_flag(wall):
    tr = make_trace(np.full((10, 2), 0.05))
    theta, report = optimize([FixationCluster(np.arange(10), 0)], tr, wall, SMALL)
    assert report.total_cost == 0.0
    assert report.diagnostics["flat_surface"]
    assert -5 <= theta.alpha <= 5 and -5 <= theta.beta <= 5


def test_all_invalid(plane_z2):
    R = [rotation_about([0, 1, 0], 180)] * 8
    tr = make_trace(np.zeros((8, 2)), R=R)
    with pytest.raises(AllInvalid):
        optimize([FixationCluster(np.arange(8), 0)], tr, plane_z2, SMALL)


def test_self_calibrate_no_clusters(room):
    g = np.c_[np.tan(np.radians(np.arange(20) * 10 % 60 - 30)), np.zeros(20)]
    p = np.tile([0, 1.6, 0], (20, 1))
    with pytest.raises(NoClusters):
        self_calibrate(make_trace(g, p), room, "IVT")


def test_self_calibrate_report(room, room_trace):
    tr, _ = room_trace
    res = self_calibrate(tr, room, theta_det=(2.0, -1.5),
                         opt_cfg=OptimizerConfig(regions=2, population_per_region=10, max_generations=30))
    d = res.to_dict()
    assert d["n_clusters"] == len(res.clusters) > 0
    assert d["cumulative_distance_m"] == cumulative_distance(tr) >= 8.0
    assert abs(d["theta_hat"][0] - 2.0) < 0.1


def test_config_validation():
    for bad in (dict(regions=0), dict(population_per_region=3), dict(de_weight=0), dict(de_weight=2.5),
                dict(crossover=1.5), dict(bounds=((5, -5), (-5, 5))), dict(penalty=0)):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)
    rb = OptimizerConfig().region_bounds()
    assert rb.shape == (16, 2, 2)
    assert rb[0].tolist() == [[-5.0, -5.0], [-2.5, -2.5]]
    assert rb[15].tolist() == [[2.5, 2.5], [5.0, 5.0]]


# -- properties ---------------------------------------------------------------

thetas = st.tuples(st.floats(-5, 5), st.floats(-5, 5))


@given(th=thetas)
def test_cost_non_negative(room, room_trace, th):
    tr, clusters = room_trace
    rep = total_cost(clusters, tr, room, th)
    assert rep.total_cost >= 0
    assert all(c.cost >= 0 for c in rep.per_cluster)
    assert abs(rep.total_cost - sum(c.cost for c in rep.per_cluster)) <= 1e-12 * rep.total_cost


@given(th=thetas, n=st.integers(2, 20))
def test_cost_zero_iff_single_point(wall, th, n):
    tr = make_trace(np.full((n, 2), 0.07))
    assert total_cost([FixationCluster(np.arange(n), 0)], tr, wall, th).total_cost == 0.0
    moving = pursuit((0, 0), n=n)
    c = whole(moving, (0, 0))
    if abs(th[0]) + abs(th[1]) > 1e-3:
        assert total_cost([c], moving, wall, th).total_cost > 0


@given(seed=st.integers(0, 2**31), truth=thetas)
def test_seed_determinism(wall, seed, truth):
    tr = pursuit(truth, n=15)
    cs = ClusterSet([whole(tr, truth)], tr, wall)
    cfg = OptimizerConfig(regions=2, population_per_region=6, max_generations=6, seed=seed)
    a, ra = optimize(cs, cfg=cfg)
    b, rb = optimize(cs, cfg=cfg)
    assert np.array_equal(a.as_array(), b.as_array())
    assert ra.total_cost == rb.total_cost


@given(seed=st.integers(0, 2**31), truth=thetas)
def test_region_partition_soundness(wall, seed, truth):
    tr = pursuit(truth, n=15)
    cs = ClusterSet([whole(tr, truth)], tr, wall)
    cfg = OptimizerConfig(regions=2, population_per_region=6, max_generations=6, seed=seed)
    theta, report = optimize(cs, cfg=cfg)
    for r in range(cfg.n_regions):
        single_theta, single_cost, _ = differential_evolution(cs, cfg, regions=[r])
        # each region's search is independent of its neighbours
        assert np.array_equal(single_theta[0], report.diagnostics["region_best_theta"][r])
        assert report.total_cost <= single_cost[0]


@given(seed=st.integers(0, 2**31), truth=st.tuples(st.floats(-3, 3), st.floats(-3, 3)),
       factor=st.floats(1.0, 1e3))
def test_penalty_only_repels(small_wall, seed, truth, factor):
    tr = pursuit(truth, n=15, target=(0.3, 0.2, 3.0), travel=0.3)
    c = whole(tr, truth)
    assert cluster_cost(c, tr, small_wall, truth) is not None
    cs = ClusterSet([c], tr, small_wall)
    cfg = OptimizerConfig(regions=2, population_per_region=6, max_generations=6, seed=seed)
    base, _ = optimize(cs, cfg=cfg)
    raised, _ = optimize(cs, cfg=OptimizerConfig(regions=2, population_per_region=6, max_generations=6,
                                                 seed=seed, penalty=cfg.penalty * factor))
    assert np.array_equal(base.as_array(), raised.as_array())
