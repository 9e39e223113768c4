import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigmap.geometry import Pose, rodrigues
from rigmap.metrics import ate
from rigmap.pgo import (
    ASSISTANT_FACTOR,
    LOOP,
    ODOMETRY,
    FactorGraph,
    NoiseModel,
    PgoConfig,
    residual_between,
)

from conftest import random_pose
from scenarios import circle, drifted_loop_graph, finite_difference_jacobian, positions, random_graph

EXT = Pose(rodrigues([0, 0.05, 0]), [0.5, 0, 0])


def test_consistent_measurement_has_zero_residual():
    rng = np.random.default_rng(0)
    b, meas = random_pose(rng), random_pose(rng)
    assert np.abs(residual_between(meas, b @ meas, b)).max() < 1e-12
    assert not np.any(residual_between(Pose.identity(), b, b))


def test_one_degree_offset_about_z():
    b, meas = Pose.identity(), Pose(np.eye(3), [1, 0, 0])
    a = b @ meas @ Pose(rodrigues([0, 0, np.deg2rad(1)]), np.zeros(3))
    r = residual_between(meas, a, b)
    assert r[2] == pytest.approx(0.017453292519943295, rel=1e-12)
    assert np.abs(r[:2]).max() < 1e-15


def _graph(poses):
    g = FactorGraph(PgoConfig())
    for i, p in enumerate(poses):
        g.add_pose(i, p)
    return g


@pytest.mark.parametrize("n,window,expected", [(2, 3, 1), (5, 3, 9), (7, 1, 6)])
def test_odometry_factor_count(n, window, expected):
    poses = circle(n + 1)[:n]
    g = _graph(poses)
    g.add_primary_odometry(list(range(n)), poses, window)
    assert g.count(ODOMETRY) == expected


def test_noise_model_defaults_and_validation():
    cfg = PgoConfig()
    assert (cfg.odometry.rotation, cfg.odometry.translation) == (0.05, 0.1)
    assert (cfg.prior.rotation, cfg.prior.translation) == (0.01, 0.01)
    assert cfg.window == 3
    with pytest.raises(ValueError):
        NoiseModel(0.0, 0.1)


def _assistant_graph(truth, ext, ext_init):
    g = _graph(truth)
    g.extrinsic = ext_init
    for i in range(1, len(truth)):
        meas = (truth[i - 1] @ ext).inverse() @ (truth[i] @ ext)
        g.add_assistant_factor(i, i - 1, meas)
    return g


def test_assistant_factor_exact_values_zero_residual():
    truth = circle(20)
    g = _assistant_graph(truth, EXT, EXT)
    assert g.cost() < 1e-20


def test_perturbed_extrinsic_is_recovered():
    truth = circle(20)
    g = _assistant_graph(truth, EXT, Pose(EXT.rotation, EXT.translation + [0.01, 0, 0]))
    g.add_primary_odometry(list(range(20)), truth)
    assert g.cost() > 1e-8
    g.optimize()
    assert g.cost() < 1e-16


def test_assistant_self_factor_rejected():
    g = _graph(circle(3))
    g.extrinsic = EXT
    with pytest.raises(ValueError):
        g.add_assistant_factor(1, 1, Pose.identity())


def test_prior_alone_pins_extrinsic():
    g = _graph([Pose.identity()])
    g.add_extrinsic_prior(EXT)
    assert g.cost() == 0.0
    g.extrinsic = Pose(rodrigues([0.1, 0, 0]), [1, 1, 1])
    g.optimize()
    np.testing.assert_allclose(g.extrinsic.matrix(), EXT.matrix(), atol=1e-9)


def test_prior_makes_straight_motion_observable():
    truth = [Pose(np.eye(3), [0, 0, float(k)]) for k in range(10)]
    g = _assistant_graph(truth, EXT, EXT)
    ext_cols = slice(g._index()[1]["ext"], None)
    J = g.linearize(robust=False)[1].toarray()[:, ext_cols]
    assert np.linalg.svd(J, compute_uv=False).min() < 1e-9
    g.add_extrinsic_prior(EXT)
    J = g.linearize(robust=False)[1].toarray()[:, ext_cols]
    assert np.linalg.svd(J, compute_uv=False).min() > 1.0


def test_loop_closure_reduces_error():
    g, truth, init = drifted_loop_graph()
    before = ate(positions(init), positions(truth), "se3")
    res = g.optimize()
    after = ate(positions([g.poses[i] for i in range(len(truth))]), positions(truth), "se3")
    assert res.final_cost < res.initial_cost
    assert res.monotone
    assert after <= 0.5 * before


def test_consistent_loop_is_a_no_op():
    truth = circle(30)
    g = _graph(truth)
    g.add_primary_odometry(list(range(30)), truth)
    g.add_loop_factor(29, 0, truth[0].inverse() @ truth[29])
    g.add_loop_factor(5, 4, truth[4].inverse() @ truth[5])
    res = g.optimize()
    assert res.iterations == 0
    assert g.count(LOOP) == 2
    for i in range(30):
        np.testing.assert_allclose(g.poses[i].matrix(), truth[i].matrix(), atol=1e-9)


def test_single_perturbed_pose_is_recovered():
    truth = [Pose(rodrigues([0, 0.1 * k, 0]), [k, 0, 0.5 * k]) for k in range(10)]
    init = list(truth)
    init[6] = truth[6] @ Pose.exp([0.02, -0.01, 0.03, 0.1, -0.05, 0.02])
    g = _graph(init)
    g.add_primary_odometry(list(range(10)), truth)
    g.optimize()
    for i in range(10):
        np.testing.assert_allclose(g.poses[i].matrix(), truth[i].matrix(), atol=1e-8)


def test_gauge_pose_is_untouched():
    g, _, init = drifted_loop_graph(60)
    g.optimize()
    assert g.poses[0] is init[0]


def test_truth_is_stationary():
    truth = circle(15)
    g = _assistant_graph(truth, EXT, EXT)
    g.add_primary_odometry(list(range(15)), truth)
    g.add_extrinsic_prior(EXT)
    g.add_loop_factor(14, 0, truth[0].inverse() @ truth[14])
    assert np.linalg.norm(g.gradient()) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_jacobian_matches_finite_differences(seed):
    g = random_graph(seed)
    J = g.linearize(robust=False)[1].toarray()
    Jfd = finite_difference_jacobian(g)
    assert np.abs(J - Jfd).max() <= 1e-4 * np.abs(Jfd).max()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lm_cost_never_increases(seed):
    g = random_graph(seed)
    res = g.optimize()
    assert res.monotone
    assert res.final_cost <= res.initial_cost


def test_huber_applies_only_to_loops():
    truth = circle(10)
    g = _graph(truth)
    far = Pose(np.eye(3), [50, 0, 0])
    g.add_loop_factor(9, 0, far)
    robust = g.cost()
    g2 = _graph(truth)
    g2.add_between(ODOMETRY, 9, 0, far, g2.config.loop)
    assert robust < g2.cost()


def test_unknown_variable_rejected():
    g = _graph(circle(3))
    with pytest.raises(KeyError):
        g.add_between(ODOMETRY, 0, 7, Pose.identity(), g.config.odometry)


def test_graph_dump(tmp_path):
    g = random_graph(1, n=3)
    g.dump(tmp_path / "g.txt")
    lines = [l.split() for l in (tmp_path / "g.txt").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == len(g.factors)
    assert {l[0] for l in lines} == {ODOMETRY, ASSISTANT_FACTOR, LOOP, "prior"}
    assert all(len(l) == 3 + 7 + 6 for l in lines)
