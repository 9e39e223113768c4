import numpy as np
import pytest
from hypothesis import given, settings
from scipy.spatial.transform import Rotation, Slerp

from rigmap.geometry import (
    DegenerateConfigurationError,
    Intrinsics,
    Pose,
    eight_point,
    epipolar_residuals,
    essential_from_f,
    fundamental_from_pose,
    interpolate_at,
    rodrigues,
    se3_interpolate,
    skew,
    so3_log,
)

from conftest import random_pose, seeds, vectors


def test_skew_zero_and_unit_axis():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))
    assert np.array_equal(skew([0, 0, 1]), np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]]))


def test_skew_is_cross_product():
    np.testing.assert_array_equal(skew([1, 2, 3]) @ np.array([4, 5, 6]), [-3, 6, -3])


@given(vectors)
def test_skew_annihilates_its_vector(v):
    assert np.abs(skew(v) @ v).max() <= 1e-12
    np.testing.assert_array_equal(skew(v), -skew(v).T)


def test_rodrigues_basic_cases():
    np.testing.assert_array_equal(rodrigues(np.zeros(3)), np.eye(3))
    R = rodrigues([0, 0, np.pi / 2])
    np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_rodrigues_log_round_trip():
    np.testing.assert_allclose(so3_log(rodrigues([0.1, 0.2, 0.3])), [0.1, 0.2, 0.3], atol=1e-10)


def test_rodrigues_small_angle_branch():
    th = np.array([3e-9, -1e-9, 2e-9])
    np.testing.assert_allclose(rodrigues(th), np.eye(3) + skew(th), atol=1e-16)


@given(vectors)
def test_rodrigues_transpose_is_inverse_rotation(th):
    assert np.abs(rodrigues(th).T - rodrigues(-th)).max() <= 1e-12


@given(seeds)
def test_pose_times_inverse_is_identity(seed):
    p = random_pose(np.random.default_rng(seed))
    q = p @ p.inverse()
    assert np.linalg.norm(q.rotation - np.eye(3)) <= 1e-9
    assert np.linalg.norm(q.translation) <= 1e-9


def test_pose_is_immutable():
    p = Pose.identity()
    with pytest.raises(ValueError):
        p.translation[0] = 1.0


def test_interpolate_endpoints_are_arguments():
    rng = np.random.default_rng(0)
    a, b = random_pose(rng), random_pose(rng)
    assert se3_interpolate(a, b, 0.0) is a
    assert se3_interpolate(a, b, 1.0) is b


def test_interpolate_pure_translation():
    a, b = Pose.identity(), Pose(np.eye(3), [2, 0, 0])
    np.testing.assert_allclose(se3_interpolate(a, b, 0.5).translation, [1, 0, 0])


def test_interpolate_matches_quaternion_slerp():
    b = Pose(rodrigues([0, 0, np.pi / 2]), np.zeros(3))
    mid = se3_interpolate(Pose.identity(), b, 0.5)
    oracle = Slerp([0, 1], Rotation.from_rotvec([[0, 0, 0], [0, 0, np.pi / 2]]))([0.5]).as_matrix()[0]
    np.testing.assert_allclose(mid.rotation, oracle, atol=1e-9)
    np.testing.assert_allclose(so3_log(mid.rotation), [0, 0, np.pi / 4], atol=1e-9)


@settings(max_examples=30)
@given(seeds)
def test_interpolated_rotations_stay_orthonormal(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pose(rng), random_pose(rng)
    for alpha in np.arange(0.0, 1.0001, 0.01):
        R = se3_interpolate(a, b, min(alpha, 1.0)).rotation
        assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-9


def test_interpolate_rejects_alpha_outside_unit_interval():
    with pytest.raises(ValueError):
        se3_interpolate(Pose.identity(), Pose.identity(), 1.5)


def test_interpolate_at_outside_span_raises():
    poses = [Pose.identity(0.0), Pose.identity(1.0)]
    with pytest.raises(ValueError):
        interpolate_at([0.0, 1.0], poses, 1.5)


def test_essential_with_identity_k_is_f():
    F = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(essential_from_f(F, Intrinsics(1, 1, 0, 0)), F)


def test_essential_round_trip_from_known_pose():
    k = Intrinsics(500, 480, 320, 240)
    rel = Pose(rodrigues([0.05, -0.1, 0.02]), [0.3, 0.1, 1.0])
    E = skew(rel.translation) @ rel.rotation
    E_back = essential_from_f(fundamental_from_pose(rel, k), k)
    # equal up to scale and sign
    E_back *= np.sign(np.vdot(E_back, E)) * np.linalg.norm(E) / np.linalg.norm(E_back)
    np.testing.assert_allclose(E_back, E, atol=1e-10)


def _stereo_matches(n, rng):
    k = Intrinsics(500, 500, 320, 240)
    pts = np.c_[rng.uniform(-2, 2, (n, 2)), rng.uniform(4, 10, n)]
    cam_b = Pose(rodrigues([0.02, 0.1, -0.03]), [0.5, 0.05, 0.1])
    x1, _ = k.project(pts)
    x2, _ = k.project(cam_b.inverse().transform(pts))
    return x1, x2


def test_eight_point_exact_correspondences():
    x1, x2 = _stereo_matches(20, np.random.default_rng(3))
    F = eight_point(x1, x2)
    assert np.abs(epipolar_residuals(F, x1, x2)).max() < 1e-8
    sv = np.linalg.svd(F, compute_uv=False)
    assert sv[2] / sv[0] <= 1e-6


def test_eight_point_needs_eight_matches():
    x1, x2 = _stereo_matches(7, np.random.default_rng(3))
    with pytest.raises(ValueError):
        eight_point(x1, x2)


def test_eight_point_identical_points_are_degenerate():
    x = np.tile([[100.0, 50.0]], (12, 1))
    with pytest.raises(DegenerateConfigurationError):
        eight_point(x, x)
