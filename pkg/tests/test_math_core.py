import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dynamics.math_core import (
    IDENTITY_QUAT,
    BodyState,
    SimParams,
    dot,
    integrate_rigid_body,
    norm,
    quat_conj,
    quat_from_axis_angle,
    quat_from_yaw,
    quat_integrate,
    quat_mul,
    quat_rotate,
    quat_rotate_inverse,
    quat_to_matrix,
    tilt_angle,
    yaw_from_quat,
)


def random_quats(rng, count):
    q = rng.standard_normal((count, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def left_matrix(a):
    """4x4 matrix L(a) with a (x) b = L(a) b."""
    w, x, y, z = a
    return np.array([
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ])


class TestQuatMul:
    def test_identity(self, rng):
        q = random_quats(rng, 1)[0]
        np.testing.assert_array_equal(quat_mul(IDENTITY_QUAT, q), q)

    def test_i_squared(self):
        i = np.array([0.0, 1.0, 0.0, 0.0])
        np.testing.assert_array_equal(quat_mul(i, i), [-1.0, 0.0, 0.0, 0.0])

    def test_matches_matrix_form(self, rng):
        a, b = random_quats(rng, 50), random_quats(rng, 50)
        expected = np.stack([left_matrix(x) @ y for x, y in zip(a, b)])
        np.testing.assert_allclose(quat_mul(a, b), expected, atol=1e-14)
        np.testing.assert_allclose(norm(quat_mul(a, b)), 1.0, atol=1e-12)

    def test_norm_is_multiplicative(self, rng):
        a = rng.standard_normal((20, 4))
        b = rng.standard_normal((20, 4))
        np.testing.assert_allclose(norm(quat_mul(a, b)), norm(a) * norm(b), rtol=1e-12)


class TestQuatRotate:
    def test_identity(self):
        np.testing.assert_array_equal(quat_rotate(IDENTITY_QUAT, np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])

    def test_quarter_turn_about_z(self):
        q = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2)
        np.testing.assert_allclose(quat_rotate(q, np.array([1.0, 0.0, 0.0])), [0.0, 1.0, 0.0], atol=1e-15)

    def test_matches_rotation_matrix(self, rng):
        q = random_quats(rng, 100)
        v = rng.standard_normal((100, 3))
        # scipy takes scalar-last quaternions
        expected = Rotation.from_quat(q[:, [1, 2, 3, 0]]).apply(v)
        np.testing.assert_allclose(quat_rotate(q, v), expected, atol=1e-12)
        np.testing.assert_allclose(np.einsum("nij,nj->ni", quat_to_matrix(q), v), expected, atol=1e-12)

    def test_isometry(self, rng):
        q = random_quats(rng, 100)
        v, w = rng.standard_normal((2, 100, 3))
        np.testing.assert_allclose(dot(quat_rotate(q, v), quat_rotate(q, w)), dot(v, w), atol=1e-10)
        np.testing.assert_allclose(norm(quat_rotate(q, v)), norm(v), rtol=1e-12)

    def test_inverse(self, rng):
        q = random_quats(rng, 10)
        v = rng.standard_normal((10, 3))
        np.testing.assert_allclose(quat_rotate_inverse(q, quat_rotate(q, v)), v, atol=1e-12)


class TestQuatIntegrate:
    def test_zero_rate(self, rng):
        q = random_quats(rng, 5)
        np.testing.assert_allclose(quat_integrate(q, np.zeros((5, 3)), 0.3), q, atol=1e-15)

    def test_zero_dt_is_exact(self, rng):
        q = random_quats(rng, 5)
        np.testing.assert_array_equal(quat_integrate(q, rng.standard_normal((5, 3)), 0.0), q)

    def test_half_turn_about_z(self):
        q = IDENTITY_QUAT.copy()
        omega = np.array([0.0, 0.0, np.pi])
        for _ in range(1000):
            q = quat_integrate(q, omega, 1e-3)
        expected = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi)
        angle = 2.0 * np.arccos(min(abs(dot(q, expected)), 1.0))
        assert angle < 1e-6

    def test_unit_norm(self, rng):
        q = random_quats(rng, 200)
        out = quat_integrate(q, 10.0 * rng.standard_normal((200, 3)), 0.01)
        np.testing.assert_allclose(norm(out), 1.0, atol=1e-12)

    def test_forward_then_backward(self, rng):
        q0 = random_quats(rng, 10)
        omega = rng.standard_normal((10, 3))
        q = q0
        for _ in range(100):
            q = quat_integrate(q, omega, 0.01)
        for _ in range(100):
            q = quat_integrate(q, -omega, 0.01)
        np.testing.assert_allclose(q, q0, atol=1e-8)


class TestIntegrateRigidBody:
    def test_constant_velocity(self):
        state = BodyState.at_rest()
        state.vel[:] = [1.0, 0.0, 0.0]
        out = integrate_rigid_body(state, np.zeros(3), np.zeros(3), 0.5)
        np.testing.assert_allclose(out.pos, [0.5, 0.0, 0.0])

    @staticmethod
    def fall(dt, duration=1.0):
        state = BodyState.at_rest()
        g = np.array([0.0, 0.0, -9.81])
        for _ in range(int(round(duration / dt))):
            state = integrate_rigid_body(state, g, np.zeros(3), dt)
        return state

    def test_free_fall(self):
        state = self.fall(1e-3)
        assert abs(state.vel[2] + 9.81) < 1e-9
        assert abs(state.pos[2] + 4.905) < 5e-3

    def test_first_order_accuracy(self):
        errors = [abs(self.fall(dt).pos[2] + 4.905) for dt in (2e-3, 1e-3)]
        assert 1.8 <= errors[0] / errors[1] <= 2.2


def test_sim_params_validation():
    assert SimParams().physics_dt == pytest.approx(0.004)
    with pytest.raises(ValueError):
        SimParams(dt_control=0.0)
    with pytest.raises(ValueError):
        SimParams(substeps=0)


def test_yaw_and_tilt_helpers():
    q = quat_from_yaw(0.7)
    assert yaw_from_quat(q) == pytest.approx(0.7)
    assert tilt_angle(q) == pytest.approx(0.0, abs=1e-7)
    tilted = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), 0.3)
    assert tilt_angle(tilted) == pytest.approx(0.3)
    np.testing.assert_allclose(quat_mul(q, quat_conj(q)), IDENTITY_QUAT, atol=1e-15)
