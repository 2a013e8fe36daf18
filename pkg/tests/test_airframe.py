from dataclasses import replace

import numpy as np
import pytest

from config_utils import ConfigError
from dynamics.airframe import (
    DroneModel,
    MotorState,
    RotorParams,
    drone_accelerations,
    get_model,
    motor_step,
    rotor_wrench,
    step_drone,
)
from dynamics.math_core import (
    IDENTITY_QUAT,
    BodyState,
    SimParams,
    quat_from_axis_angle,
    quat_rotate,
    tilt_angle,
)

def single_rotor_model(tilt):
    rotors = [RotorParams(np.array([0.1 * i, 0.0, 0.0]), IDENTITY_QUAT, 2.0, 0.016, 1, 0.05)
              for i in range(3)]
    rotors[0] = replace(rotors[0], tilt=tilt)
    return DroneModel.from_rotors("toy", 1.0, [0.01, 0.01, 0.02], rotors)


class TestRegistry:
    @pytest.mark.parametrize("name, rotors, tilts", [
        ("crazyflie", 4, 0), ("hummingbird", 4, 0), ("firefly", 6, 0), ("omav", 12, 6),
    ])
    def test_shipped_models(self, name, rotors, tilts):
        model = get_model(name)
        assert model.num_rotors == rotors
        assert model.num_tilts == tilts
        assert model.rotor_action_dim == rotors + tilts
        np.testing.assert_allclose(model.hover_throttle(9.81), 0.5, atol=1e-12)

    def test_unknown_model(self):
        with pytest.raises(ConfigError, match="task.model"):
            get_model("blimp")

    def test_overrides(self):
        model = get_model("hummingbird", {"drag_coeff": 0.0, "ideal_motors": True})
        assert model.drag_coeff == 0.0 and model.ideal_motors
        with pytest.raises(ConfigError, match="model_overrides"):
            get_model("hummingbird", {"mass": 2.0})

    def test_bad_rotor_row(self, tmp_path):
        path = tmp_path / "drones.yaml"
        path.write_text("models:\n  bad:\n    mass: 1.0\n    inertia: [1, 1, 1]\n"
                        "    rotors:\n      - [0, 0, 0]\n")
        with pytest.raises(ConfigError, match=r"models.bad.rotors\[0\]"):
            get_model("bad", path=path)


class TestRotorWrench:
    def test_equal_throttles_symmetric_quad(self, hummingbird):
        motors = MotorState(np.full(4, 0.3))
        wrench = rotor_wrench(hummingbird, motors)
        np.testing.assert_allclose(wrench.torque, 0.0, atol=1e-12)
        np.testing.assert_allclose(wrench.force, [0.0, 0.0, 4 * 0.3 * hummingbird.max_thrust[0]], rtol=1e-12)

    def test_front_right_rotor(self, hummingbird):
        front_right = int(np.flatnonzero((hummingbird.rotor_pos[:, 0] > 0) & (hummingbird.rotor_pos[:, 1] < 0))[0])
        throttle = np.zeros(4)
        throttle[front_right] = 1.0
        wrench = rotor_wrench(hummingbird, MotorState(throttle))
        f = hummingbird.max_thrust[front_right]
        r = hummingbird.rotor_pos[front_right]
        expected = np.cross(r, [0.0, 0.0, f]) + hummingbird.spin[front_right] * 0.016 * np.array([0.0, 0.0, f])
        np.testing.assert_allclose(wrench.torque, expected, atol=1e-12)
        assert wrench.torque[0] < 0
        assert np.sign(wrench.torque[2]) == hummingbird.spin[front_right]

    def test_rotor_tilted_toward_x(self):
        model = single_rotor_model(quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 2))
        wrench = rotor_wrench(model, MotorState(np.array([0.4, 0.0, 0.0])))
        assert abs(wrench.force[0] - 0.4 * 2.0) < 1e-12
        assert model.is_tilted

    def test_linear_in_throttle(self, rng):
        model = get_model("firefly")
        t1, t2 = rng.uniform(0, 0.5, (2, 6))
        a, b = 0.7, 1.3
        combined = rotor_wrench(model, MotorState(a * t1 + b * t2))
        w1, w2 = rotor_wrench(model, MotorState(t1)), rotor_wrench(model, MotorState(t2))
        np.testing.assert_allclose(combined.force, a * w1.force + b * w2.force, atol=1e-12)
        np.testing.assert_allclose(combined.torque, a * w1.torque + b * w2.torque, atol=1e-12)

    def test_omav_tilt_turns_thrust(self):
        model = get_model("omav")
        motors = MotorState(np.full(12, 0.5), np.zeros(6))
        level = rotor_wrench(model, motors)
        tilted = rotor_wrench(model, MotorState(motors.throttle, np.full(6, 0.5)))
        assert tilted.force[2] < level.force[2]
        np.testing.assert_allclose(level.force[:2], 0.0, atol=1e-12)


class TestMotorStep:
    def test_at_target(self, hummingbird):
        motors = MotorState(np.full(4, 0.4))
        out = motor_step(motors, motors, 0.004, hummingbird)
        np.testing.assert_array_equal(out.throttle, motors.throttle)

    def test_one_time_constant(self, hummingbird):
        tau = hummingbird.motor_tau[0]
        motors, target = MotorState(np.zeros(4)), MotorState(np.ones(4))
        for _ in range(100):
            motors = motor_step(motors, target, tau / 100, hummingbird)
        np.testing.assert_allclose(motors.throttle, 1.0 - np.exp(-1.0), rtol=0.02)

    def test_converges(self, hummingbird):
        tau = hummingbird.motor_tau[0]
        motors, target = MotorState(np.zeros(4)), MotorState(np.full(4, 0.8))
        for _ in range(1000):
            motors = motor_step(motors, target, tau / 100, hummingbird)
        assert np.all(np.abs(motors.throttle - 0.8) < 1e-4)

    def test_ideal_motors_pass_through(self, ideal_hummingbird):
        out = motor_step(MotorState(np.zeros(4)), MotorState(np.full(4, 0.7)), 0.004, ideal_hummingbird)
        np.testing.assert_array_equal(out.throttle, 0.7)


class TestStepDrone:
    def test_hover_equilibrium(self, hummingbird):
        model = replace(hummingbird, drag_coeff=np.float64(0.0))
        state = BodyState.at_rest(pos=(0.0, 0.0, 1.0))
        motors = MotorState(model.hover_throttle(9.81))
        params = SimParams()
        for _ in range(1000):
            state, motors = step_drone(state, motors, None, model, np.zeros(3), params)
        assert np.linalg.norm(state.pos - [0.0, 0.0, 1.0]) < 1e-6
        assert tilt_angle(state.quat) < 1e-6

    def test_free_fall(self, ideal_hummingbird):
        state = BodyState.at_rest()
        motors = MotorState(np.zeros(4))
        params = SimParams(dt_control=0.01, substeps=10)
        for _ in range(100):
            state, motors = step_drone(state, motors, motors, ideal_hummingbird, np.zeros(3), params)
        assert abs(state.pos[2] + 4.905) < 5e-3

    def test_torque_free_principal_spin(self, hummingbird):
        state = BodyState.at_rest()
        state.omega[:] = [0.0, 0.0, 3.0]
        motors = MotorState(np.zeros(4))
        for _ in range(62):
            state, motors = step_drone(state, motors, None, hummingbird, np.zeros(3), SimParams())
        assert abs(np.linalg.norm(state.omega) - 3.0) < 1e-9

    def test_energy_drift_without_thrust(self, ideal_hummingbird):
        model = ideal_hummingbird
        state = BodyState.at_rest(pos=(0.0, 0.0, 10.0))
        state.vel[:] = [0.5, -0.3, 0.0]
        state.omega[:] = [0.0, 0.0, 2.0]
        motors = MotorState(np.zeros(4))

        def energy(s):
            return (0.5 * model.mass * s.vel @ s.vel + 0.5 * s.omega @ (model.inertia * s.omega)
                    + model.mass * 9.81 * s.pos[2])

        e0 = energy(state)
        params = SimParams(dt_control=0.01, substeps=10)
        for _ in range(100):
            state, motors = step_drone(state, motors, None, model, np.zeros(3), params)
        assert abs(energy(state) - e0) / e0 < 1e-3

    def test_angular_momentum_conserved(self, ideal_hummingbird):
        model = ideal_hummingbird
        state = BodyState.at_rest()
        state.omega[:] = [0.3, 0.2, 0.5]
        motors = MotorState(np.zeros(4))

        def momentum(s):
            return quat_rotate(s.quat, model.inertia * s.omega)

        l0 = momentum(state)
        params = SimParams(dt_control=0.01, substeps=10)
        for _ in range(100):
            state, motors = step_drone(state, motors, None, model, np.zeros(3), params)
        assert np.linalg.norm(momentum(state) - l0) / np.linalg.norm(l0) < 1e-3

    def test_double_mass_halves_acceleration(self, ideal_hummingbird):
        state = BodyState.at_rest()
        motors = MotorState(np.array([0.2, 0.5, 0.7, 0.4]))
        heavy = replace(ideal_hummingbird, mass=2.0 * ideal_hummingbird.mass)
        a1, _ = drone_accelerations(state, motors, ideal_hummingbird, np.zeros(3), np.zeros(3))
        a2, _ = drone_accelerations(state, motors, heavy, np.zeros(3), np.zeros(3))
        np.testing.assert_allclose(a2, 0.5 * a1, atol=1e-12)

    def test_batched_matches_single(self, hummingbird, rng):
        batch = hummingbird.broadcast((3,))
        state = BodyState.at_rest((3,))
        state.vel[:] = rng.standard_normal((3, 3))
        throttle = rng.uniform(0, 1, (3, 4))
        out, _ = step_drone(state, MotorState(throttle), None, batch, np.zeros((3, 3)), SimParams())
        for i in range(3):
            single, _ = step_drone(state[i].copy(), MotorState(throttle[i]), None, hummingbird,
                                   np.zeros(3), SimParams())
            np.testing.assert_allclose(out.pos[i], single.pos, atol=1e-15)
            np.testing.assert_allclose(out.quat[i], single.quat, atol=1e-15)
