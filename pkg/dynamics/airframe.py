"""
Airframe models, rotor wrench aggregation, motor lag and single-body stepping.

Model arrays broadcast: an unbatched model holds scalars / (n,) / (n, 3)
arrays, a batched model (see `DroneModel.broadcast`) holds the randomisable
fields with leading batch dims. Geometry (positions, axes, spin, k) is
never batched.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from config_utils import ConfigError, as_float, as_vec, config_dir, read_yaml
from dynamics.math_core import (
    BodyState,
    SimParams,
    cross,
    integrate_rigid_body,
    quat_from_axis_angle,
    quat_rotate,
)

logger = logging.getLogger(__name__)

Z_AXIS = np.array([0.0, 0.0, 1.0])
RANDOMIZED_FIELDS = ("mass", "inertia", "max_thrust", "motor_tau", "drag_coeff")


@dataclass(frozen=True)
class RotorParams:
    position: np.ndarray          # T_B, body frame, m
    tilt: np.ndarray              # R_B as a unit quaternion
    max_thrust: float             # N
    force_to_moment: float        # k, m
    spin: int                     # +1 / -1
    motor_tau: float              # s

    def __post_init__(self):
        if not self.max_thrust > 0:
            raise ValueError(f"max_thrust must be > 0, got {self.max_thrust}")
        if not self.motor_tau > 0:
            raise ValueError(f"motor_tau must be > 0, got {self.motor_tau}")
        if self.spin not in (1, -1):
            raise ValueError(f"spin must be +1 or -1, got {self.spin}")
        if abs(np.linalg.norm(self.tilt) - 1.0) > 1e-9:
            raise ValueError("tilt quaternion must have unit norm")


@dataclass(frozen=True, eq=False)
class TiltUnits:
    """Tiltable arms: each rotor belongs to one arm that turns about `axes[arm]`."""
    arm_of_rotor: np.ndarray      # (n,) int
    axes: np.ndarray              # (arms, 3) unit, body frame
    tau: float
    limit: float                  # rad, commands map to [-limit, limit]

    @property
    def num_arms(self) -> int:
        return int(self.axes.shape[0])


@dataclass(frozen=True, eq=False)
class DroneModel:
    name: str
    mass: np.ndarray
    inertia: np.ndarray
    rotor_pos: np.ndarray
    rotor_axis: np.ndarray
    max_thrust: np.ndarray
    force_to_moment: np.ndarray
    spin: np.ndarray
    motor_tau: np.ndarray
    drag_coeff: np.ndarray
    tilt_units: Optional[TiltUnits] = None
    ideal_motors: bool = False

    @classmethod
    def from_rotors(cls, name: str, mass: float, inertia, rotors: List[RotorParams],
                    drag_coeff: float = 0.0, tilt_units: Optional[TiltUnits] = None) -> "DroneModel":
        if not mass > 0:
            raise ValueError(f"{name}: mass must be > 0")
        inertia = np.asarray(inertia, dtype=np.float64)
        if inertia.shape != (3,) or not np.all(inertia > 0):
            raise ValueError(f"{name}: inertia must be 3 positive numbers")
        if len(rotors) < 3:
            raise ValueError(f"{name}: at least 3 rotors required, got {len(rotors)}")
        if drag_coeff < 0:
            raise ValueError(f"{name}: drag_coeff must be >= 0")
        tilts = np.stack([r.tilt for r in rotors])
        return cls(
            name=name,
            mass=np.float64(mass),
            inertia=inertia,
            rotor_pos=np.stack([np.asarray(r.position, dtype=np.float64) for r in rotors]),
            rotor_axis=quat_rotate(tilts, np.broadcast_to(Z_AXIS, (len(rotors), 3))),
            max_thrust=np.array([r.max_thrust for r in rotors], dtype=np.float64),
            force_to_moment=np.array([r.force_to_moment for r in rotors], dtype=np.float64),
            spin=np.array([r.spin for r in rotors], dtype=np.float64),
            motor_tau=np.array([r.motor_tau for r in rotors], dtype=np.float64),
            drag_coeff=np.float64(drag_coeff),
            tilt_units=tilt_units,
        )

    @property
    def num_rotors(self) -> int:
        return int(self.rotor_pos.shape[0])

    @property
    def num_tilts(self) -> int:
        return 0 if self.tilt_units is None else self.tilt_units.num_arms

    @property
    def rotor_action_dim(self) -> int:
        return self.num_rotors + self.num_tilts

    @property
    def is_tilted(self) -> bool:
        return self.tilt_units is not None or not np.allclose(self.rotor_axis, Z_AXIS, atol=1e-12)

    def hover_throttle(self, gravity: float = 9.81, extra_mass: float = 0.0) -> np.ndarray:
        """Equal per-rotor throttle whose total thrust balances (mass + extra_mass) * g."""
        weight = (self.mass + extra_mass) * gravity
        total = self.max_thrust.sum(axis=-1)
        return np.broadcast_to((weight / total)[..., None], np.shape(self.max_thrust)).copy()

    def broadcast(self, shape) -> "DroneModel":
        """Writable copy whose randomisable fields carry leading `shape`."""
        shape = tuple(shape)
        fields = {}
        for name in RANDOMIZED_FIELDS:
            value = np.asarray(getattr(self, name))
            fields[name] = np.broadcast_to(value, shape + value.shape).copy()
        return replace(self, **fields)

    def assign(self, idx, other: "DroneModel") -> None:
        """Overwrite the rows `idx` of a batched model with the fields of `other`."""
        for name in RANDOMIZED_FIELDS:
            getattr(self, name)[idx] = getattr(other, name)

    def row(self, idx) -> "DroneModel":
        return replace(self, **{name: np.asarray(getattr(self, name)[idx]) for name in RANDOMIZED_FIELDS})


@dataclass
class MotorState:
    throttle: np.ndarray              # (..., n) in [0, 1]
    tilt: Optional[np.ndarray] = None  # (..., arms) rad, tiltable models only

    @classmethod
    def zeros(cls, model: DroneModel, shape=()) -> "MotorState":
        shape = tuple(shape)
        tilt = np.zeros(shape + (model.num_tilts,)) if model.num_tilts else None
        return cls(np.zeros(shape + (model.num_rotors,)), tilt)

    def copy(self) -> "MotorState":
        return MotorState(self.throttle.copy(), None if self.tilt is None else self.tilt.copy())


@dataclass
class Wrench:
    force: np.ndarray     # body frame, N
    torque: np.ndarray    # body frame, N m


def rotor_axes(model: DroneModel, motors: MotorState) -> np.ndarray:
    """Thrust direction of every rotor in the body frame, (..., n, 3)."""
    if model.tilt_units is None or motors.tilt is None:
        return model.rotor_axis
    units = model.tilt_units
    arm_quat = quat_from_axis_angle(units.axes, motors.tilt)      # (..., arms, 4)
    rotor_quat = arm_quat[..., units.arm_of_rotor, :]             # (..., n, 4)
    return quat_rotate(rotor_quat, model.rotor_axis)


def rotor_wrench(model: DroneModel, motors: MotorState) -> Wrench:
    thrust = motors.throttle * model.max_thrust                    # (..., n)
    forces = thrust[..., None] * rotor_axes(model, motors)         # (..., n, 3)
    drag_moment = (model.spin * model.force_to_moment)[..., None] * forces
    torques = cross(model.rotor_pos, forces) + drag_moment
    return Wrench(force=forces.sum(axis=-2), torque=torques.sum(axis=-2))


def motor_step(motors: MotorState, target: MotorState, dt: float, model: DroneModel) -> MotorState:
    """First-order lag toward `target`, clamped to the actuator range."""
    if model.ideal_motors:
        tilt = None if target.tilt is None else target.tilt.copy()
        return MotorState(np.clip(target.throttle, 0.0, 1.0), tilt)
    throttle = motors.throttle + (dt / model.motor_tau) * (target.throttle - motors.throttle)
    tilt = motors.tilt
    if model.tilt_units is not None and motors.tilt is not None:
        units = model.tilt_units
        tilt = motors.tilt + (dt / units.tau) * (target.tilt - motors.tilt)
        tilt = np.clip(tilt, -units.limit, units.limit)
    return MotorState(np.clip(throttle, 0.0, 1.0), tilt)


def drone_accelerations(state: BodyState, motors: MotorState, model: DroneModel,
                        external_force, gravity):
    """World linear acceleration and body angular acceleration of the bare airframe."""
    wrench = rotor_wrench(model, motors)
    mass = np.asarray(model.mass)[..., None]
    accel = (quat_rotate(state.quat, wrench.force) / mass + gravity
             + (external_force - np.asarray(model.drag_coeff)[..., None] * state.vel) / mass)
    inertia = model.inertia
    gyro = cross(state.omega, inertia * state.omega)
    omega_dot = (wrench.torque - gyro) / inertia
    return accel, omega_dot


def step_drone(state: BodyState, motors: MotorState, target: Optional[MotorState],
               model: DroneModel, external_force, params: SimParams):
    """
    Advance one control step made of `params.substeps` physics sub-steps.
    Motor lag runs every sub-step; `target=None` holds the current motor state.
    Returns (state, motors).
    """
    dt = params.physics_dt
    if target is None:
        target = motors
    external_force = np.asarray(external_force, dtype=np.float64)
    for _ in range(params.substeps):
        motors = motor_step(motors, target, dt, model)
        accel, omega_dot = drone_accelerations(state, motors, model, external_force, params.gravity)
        state = integrate_rigid_body(state, accel, omega_dot, dt)
    return state, motors


# ------------------------------------------------------
# Registry
# ------------------------------------------------------
def _parse_rotor_row(row, mass: float, num_rotors: int, key: str) -> RotorParams:
    if not isinstance(row, (list, tuple)) or len(row) != 11:
        raise ConfigError("rotor rows need 11 values: x y z ax ay az angle spin max_thrust k tau", key=key)
    x, y, z, ax, ay, az, angle = (as_float(v, key) for v in row[:7])
    spin = int(as_float(row[7], key))
    if row[8] == "auto":
        max_thrust = 2.0 * mass * 9.81 / num_rotors
    else:
        max_thrust = as_float(row[8], key, positive=True)
    axis = np.array([ax, ay, az])
    if angle == 0.0 or not np.any(axis):
        tilt = np.array([1.0, 0.0, 0.0, 0.0])
    else:
        tilt = quat_from_axis_angle(axis, angle)
    try:
        return RotorParams(
            position=np.array([x, y, z]),
            tilt=tilt,
            max_thrust=max_thrust,
            force_to_moment=as_float(row[9], key),
            spin=spin,
            motor_tau=as_float(row[10], key, positive=True),
        )
    except ValueError as e:
        raise ConfigError(str(e), key=key)


def model_from_dict(name: str, spec: Dict) -> DroneModel:
    prefix = f"models.{name}"
    if "mass" not in spec or "rotors" not in spec:
        raise ConfigError("model needs 'mass' and 'rotors'", key=prefix)
    mass = as_float(spec["mass"], f"{prefix}.mass", positive=True)
    inertia = as_vec(spec.get("inertia"), f"{prefix}.inertia")
    rows = spec["rotors"]
    rotors = [_parse_rotor_row(r, mass, len(rows), f"{prefix}.rotors[{i}]") for i, r in enumerate(rows)]
    tilt_units = None
    if spec.get("tilt_units"):
        tu = spec["tilt_units"]
        axes = np.array([as_vec(a, f"{prefix}.tilt_units.axes") for a in tu["axes"]])
        axes = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
        arm_of_rotor = np.array(tu["arm_of_rotor"], dtype=np.int64)
        if arm_of_rotor.shape != (len(rotors),) or arm_of_rotor.max() >= len(axes):
            raise ConfigError("arm_of_rotor must give one valid arm per rotor", key=f"{prefix}.tilt_units")
        tilt_units = TiltUnits(
            arm_of_rotor=arm_of_rotor,
            axes=axes,
            tau=as_float(tu.get("tau", 0.1), f"{prefix}.tilt_units.tau", positive=True),
            limit=as_float(tu.get("limit", np.pi / 2), f"{prefix}.tilt_units.limit", positive=True),
        )
    try:
        return DroneModel.from_rotors(
            name, mass, inertia, rotors,
            drag_coeff=as_float(spec.get("drag_coeff", 0.0), f"{prefix}.drag_coeff", non_negative=True),
            tilt_units=tilt_units,
        )
    except ValueError as e:
        raise ConfigError(str(e), key=prefix)


def registry_path(path=None) -> Path:
    return Path(path) if path else config_dir() / "drones.yaml"


def load_registry(path=None) -> Dict[str, Dict]:
    data = read_yaml(registry_path(path))
    models = data.get("models")
    if not isinstance(models, dict) or not models:
        raise ConfigError("registry has no 'models' mapping", key="models")
    return models


def get_model(name: str, overrides: Optional[Dict] = None, path=None) -> DroneModel:
    models = load_registry(path)
    if name not in models:
        raise ConfigError(f"unknown drone model {name!r}; known: {sorted(models)}", key="task.model")
    model = model_from_dict(name, models[name])
    overrides = overrides or {}
    unknown = set(overrides) - {"drag_coeff", "ideal_motors"}
    if unknown:
        raise ConfigError(f"unsupported keys {sorted(unknown)}", key="model_overrides")
    if "drag_coeff" in overrides:
        model = replace(model, drag_coeff=np.float64(
            as_float(overrides["drag_coeff"], "model_overrides.drag_coeff", non_negative=True)))
    if overrides.get("ideal_motors"):
        model = replace(model, ideal_motors=True)
    logger.debug("loaded model name=%s rotors=%d mass=%.3f", name, model.num_rotors, float(model.mass))
    return model
