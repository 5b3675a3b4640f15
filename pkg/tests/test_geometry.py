import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slammot.geometry import (
    NoiseModel,
    Pose2,
    Velocity2,
    between,
    compose,
    compose_arrays,
    compose_jacobian_left,
    inverse,
    inverse_arrays,
    pose_error,
    wrap_angle,
    wrap_angles,
)

from conftest import central_difference

coord = st.floats(-50, 50, allow_nan=False)
angle = st.floats(-10, 10, allow_nan=False)
poses = st.builds(Pose2, coord, coord, angle)


def close(a: Pose2, b: Pose2, tol=1e-9):
    return abs(a.x - b.x) < tol and abs(a.y - b.y) < tol and abs(wrap_angle(a.yaw - b.yaw)) < tol


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    a = wrap_angles(np.linspace(-20, 20, 1001))
    assert np.all(a > -math.pi) and np.all(a <= math.pi)


def test_pose_yaw_is_wrapped():
    assert Pose2(0, 0, 2 * math.pi + 0.1).yaw == pytest.approx(0.1)


def test_compose_known_value():
    p = compose(Pose2(1.0, 2.0, math.pi / 2), Pose2(1.0, 0.0, 0.0))
    assert close(p, Pose2(1.0, 3.0, math.pi / 2))


@settings(max_examples=200, deadline=None)
@given(poses, poses, poses)
def test_compose_associative(a, b, c):
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-7)


@settings(max_examples=200, deadline=None)
@given(poses)
def test_inverse_roundtrip(p):
    assert close(compose(p, inverse(p)), Pose2(), 1e-9)
    assert close(compose(inverse(p), p), Pose2(), 1e-9)


@settings(max_examples=100, deadline=None)
@given(poses, poses)
def test_between_recovers_relative(a, b):
    assert close(compose(a, between(a, b)), b, 1e-8)


def test_pose_error_wraps_yaw():
    e = pose_error(Pose2(0, 0, math.pi - 0.1), Pose2(0, 0, -math.pi + 0.1))
    assert e[2] == pytest.approx(-0.2)


def test_array_versions_match_scalar(rng):
    a = np.column_stack([rng.normal(size=50), rng.normal(size=50), rng.uniform(-3, 3, 50)])
    b = np.column_stack([rng.normal(size=50), rng.normal(size=50), rng.uniform(-3, 3, 50)])
    ab = compose_arrays(a, b)
    ia = inverse_arrays(a)
    for i in range(50):
        pa, pb = Pose2.from_array(a[i]), Pose2.from_array(b[i])
        assert close(Pose2.from_array(ab[i]), compose(pa, pb))
        assert close(Pose2.from_array(ia[i]), inverse(pa))


def test_compose_jacobian_left_matches_fd(rng):
    for _ in range(20):
        a = np.array([*rng.normal(size=2), rng.uniform(-3, 3)])
        b = np.array([*rng.normal(size=2) * 5, rng.uniform(-3, 3)])
        num = central_difference(lambda x: compose_arrays(x, b)[:2], a)
        ana = compose_jacobian_left(a, b)
        assert np.allclose(ana[:2], num, atol=1e-7)
        assert np.allclose(ana[2], [0, 0, 1])


def test_matmul_operator():
    a, b = Pose2(1, 2, 0.3), Pose2(-1, 0.5, 1.0)
    assert close(a @ b, compose(a, b))


def test_velocity_rejects_nan():
    with pytest.raises(ValueError):
        Velocity2(float("nan"), 0.0)


class TestNoiseModel:
    def test_from_sigmas(self):
        n = NoiseModel.from_sigmas([0.5, 2.0])
        assert np.allclose(n.whiten([1.0, 1.0]), [2.0, 0.5])
        assert np.allclose(n.covariance, np.diag([0.25, 4.0]))
        assert n.log_det() == pytest.approx(math.log(2.0) + math.log(0.5))

    def test_from_covariance_roundtrip(self, rng):
        A = rng.normal(size=(3, 3))
        cov = A @ A.T + 0.1 * np.eye(3)
        n = NoiseModel.from_covariance(cov)
        assert np.allclose(n.covariance, cov)
        assert np.allclose(n.sqrt_info, np.triu(n.sqrt_info))
        r = rng.normal(size=3)
        assert float(n.whiten(r) @ n.whiten(r)) == pytest.approx(float(r @ np.linalg.solve(cov, r)))
        assert np.allclose(n.unwhiten(n.whiten(r)), r)

    @pytest.mark.parametrize("bad", [[[1.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [0.0, 1.0]], [[1.0, 2.0]]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            NoiseModel(np.array(bad))

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            NoiseModel.from_sigmas([1.0, 0.0])
