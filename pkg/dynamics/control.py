"""
Control allocation and the cascaded velocity -> attitude -> rate controllers.

All controllers broadcast over leading batch dims and return throttles in
[0, 1]. Torque and thrust are in body frame, rates in rad/s.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from config_utils import ConfigError, as_vec
from dynamics.airframe import DroneModel, load_registry
from dynamics.math_core import (
    BodyState,
    body_z_axis,
    dot,
    norm,
    quat_conj,
    quat_exp,
    quat_from_yaw,
    quat_mul,
    quat_normalize,
    quat_rotate_inverse,
)

logger = logging.getLogger(__name__)

MAX_TILT = np.deg2rad(60.0)


class AllocationError(ValueError):
    """Raised for rotor layouts that cannot produce independent thrust and torques."""


class ControlMode(str, enum.Enum):
    ROTOR = "rotor"
    VELOCITY = "velocity"
    RATE = "rate"
    ATTITUDE = "attitude"

    @classmethod
    def parse(cls, value) -> "ControlMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown control mode {value!r}; expected one of "
                              f"{[m.value for m in cls]}", key="task.control_mode")


@dataclass(frozen=True, eq=False)
class PdGains:
    rate_kp: np.ndarray
    attitude_kp: np.ndarray
    vel_kp: np.ndarray
    vel_kd: np.ndarray
    accel_filter: float = 0.5   # weight of the previous estimate in the 1-step low-pass

    def __post_init__(self):
        for name in ("rate_kp", "attitude_kp", "vel_kp", "vel_kd"):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != (3,) or not np.all(value > 0):
                raise ValueError(f"{name} must be 3 positive numbers")
            object.__setattr__(self, name, value)

    @classmethod
    def from_dict(cls, data: Dict, prefix: str = "gains") -> "PdGains":
        try:
            return cls(**{k: as_vec(data.get(k), f"{prefix}.{k}")
                          for k in ("rate_kp", "attitude_kp", "vel_kp", "vel_kd")},
                       accel_filter=float(data.get("accel_filter", 0.5)))
        except ValueError as e:
            raise ConfigError(str(e), key=prefix)


def load_gains(name: str, path=None) -> PdGains:
    models = load_registry(path)
    gains = (models.get(name) or {}).get("gains")
    if not gains:
        raise ConfigError(f"no controller gains for model {name!r}", key=f"models.{name}.gains")
    return PdGains.from_dict(gains, prefix=f"models.{name}.gains")


@dataclass(frozen=True, eq=False)
class AllocationMatrix:
    B: np.ndarray        # (4, n): throttles -> (thrust, roll, pitch, yaw torque)
    B_pinv: np.ndarray   # (n, 4)


def build_allocation(model: DroneModel) -> AllocationMatrix:
    if model.is_tilted:
        raise AllocationError(f"{model.name}: tilted rotors only support rotor control")
    pos = model.rotor_pos
    columns = np.stack([
        np.ones(model.num_rotors),
        pos[:, 1],
        -pos[:, 0],
        model.spin * model.force_to_moment,
    ])
    B = columns * model.max_thrust
    rank = np.linalg.matrix_rank(B)
    if rank < 4:
        raise AllocationError(f"{model.name}: allocation matrix has rank {rank} < 4")
    return AllocationMatrix(B=B, B_pinv=np.linalg.pinv(B))


def allocate(alloc: AllocationMatrix, wrench) -> np.ndarray:
    """Unclamped throttles for a (..., 4) collective-thrust/torque request."""
    # explicit sum keeps every batch row independent of the batch size
    return (alloc.B_pinv * wrench[..., None, :]).sum(axis=-1)


def apply_allocation(alloc: AllocationMatrix, throttle) -> np.ndarray:
    return (alloc.B * throttle[..., None, :]).sum(axis=-1)


def rate_control(state: BodyState, target_rates, collective_thrust, gains: PdGains,
                 alloc: AllocationMatrix) -> np.ndarray:
    torque = gains.rate_kp * (target_rates - state.omega)
    wrench = np.concatenate([np.asarray(collective_thrust, dtype=np.float64)[..., None]
                             * np.ones(torque.shape[:-1] + (1,)), torque], axis=-1)
    return np.clip(allocate(alloc, wrench), 0.0, 1.0)


def attitude_error(quat, target_quat) -> np.ndarray:
    """
    Vector part of q^-1 (x) q_target. The error quaternion is flipped when its
    scalar part is negative, so the shorter rotation is commanded; at exactly
    zero scalar part the raw product is kept.
    """
    err = quat_mul(quat_conj(quat), target_quat)
    sign = np.where(err[..., :1] < 0.0, -1.0, 1.0)
    return sign * err[..., 1:]


def attitude_control(state: BodyState, target_quat, collective_thrust, gains: PdGains,
                     alloc: AllocationMatrix) -> np.ndarray:
    target_rates = gains.attitude_kp * attitude_error(state.quat, target_quat)
    return rate_control(state, target_rates, collective_thrust, gains, alloc)


@dataclass
class VelocityMemory:
    """Per-environment state of the velocity loop's derivative term."""
    prev_vel: np.ndarray
    accel: np.ndarray
    initialized: np.ndarray

    @classmethod
    def zeros(cls, shape=()) -> "VelocityMemory":
        shape = tuple(shape)
        return cls(np.zeros(shape + (3,)), np.zeros(shape + (3,)), np.zeros(shape, dtype=bool))

    def reset(self, idx) -> None:
        self.prev_vel[idx] = 0.0
        self.accel[idx] = 0.0
        self.initialized[idx] = False


def thrust_attitude(force_world, yaw) -> np.ndarray:
    """
    Attitude whose body z axis points along `force_world` with heading `yaw`:
    q_yaw (x) shortest-arc(e_z -> direction expressed in the yaw frame).
    """
    q_yaw = quat_from_yaw(yaw)
    f = quat_rotate_inverse(q_yaw, force_world)
    n = f / norm(f)[..., None]
    arc = np.stack([1.0 + n[..., 2], -n[..., 1], n[..., 0], np.zeros_like(n[..., 0])], axis=-1)
    return quat_normalize(quat_mul(q_yaw, quat_normalize(arc)))


def clamp_tilt(direction, max_tilt: float = MAX_TILT) -> np.ndarray:
    """
    Unit vector within `max_tilt` of world z, closest to `direction`.
    Zero or straight-down requests map to world z.
    """
    length = norm(direction)
    n = np.where(length[..., None] > 0, direction / np.where(length > 0, length, 1.0)[..., None],
                 np.array([0.0, 0.0, 1.0]))
    horizontal = n[..., :2]
    h_norm = np.sqrt((horizontal ** 2).sum(axis=-1))
    too_steep = np.arccos(np.clip(n[..., 2], -1.0, 1.0)) > max_tilt
    safe = np.where(h_norm > 0, h_norm, 1.0)
    clamped = np.concatenate([
        horizontal / safe[..., None] * np.sin(max_tilt),
        np.full(n.shape[:-1] + (1,), np.cos(max_tilt)),
    ], axis=-1)
    clamped = clamped / norm(clamped)[..., None]
    return np.where(too_steep[..., None], clamped, n)


def velocity_control(state: BodyState, target_vel, target_yaw, gains: PdGains,
                     alloc: AllocationMatrix, mass, gravity, memory: VelocityMemory,
                     dt: float):
    """
    PD on velocity: a_des = kp (v* - v) - kd a_est - g, with a_est a low-passed
    finite difference of velocity. Returns (throttles, updated memory).
    """
    gravity = np.asarray(gravity, dtype=np.float64)
    raw_accel = np.where(memory.initialized[..., None], (state.vel - memory.prev_vel) / dt, 0.0)
    accel = gains.accel_filter * memory.accel + (1.0 - gains.accel_filter) * raw_accel
    memory = VelocityMemory(prev_vel=state.vel.copy(), accel=accel,
                            initialized=np.ones_like(memory.initialized))

    desired = gains.vel_kp * (target_vel - state.vel) - gains.vel_kd * accel - gravity
    force = np.asarray(mass)[..., None] * desired
    direction = clamp_tilt(force)
    force_limited = direction * norm(force)[..., None]
    thrust = np.maximum(dot(force_limited, body_z_axis(state.quat)), 0.0)
    target_quat = thrust_attitude(direction, target_yaw)
    return attitude_control(state, target_quat, thrust, gains, alloc), memory


def attitude_command(roll_pitch, yaw) -> np.ndarray:
    """q_yaw (x) exp((roll, pitch, 0)): heading first, then a tilt in the heading frame."""
    rotvec = np.concatenate([roll_pitch, np.zeros(np.shape(roll_pitch)[:-1] + (1,))], axis=-1)
    return quat_mul(quat_from_yaw(yaw), quat_exp(rotvec))


class CascadeController:
    """
    Turns normalised policy actions in [-1, 1] into rotor targets for one
    control mode. Command ranges:
      velocity: +-2 m/s per axis, yaw +-pi
      rate:     +-4 rad/s per axis, thrust [0, 2 m g]
      attitude: roll/pitch +-45 deg, yaw +-pi, thrust [0, 2 m g]
      rotor:    throttle = (a + 1) / 2, tilt = a * limit
    """

    def __init__(self, mode: ControlMode, model: DroneModel, gains: Optional[PdGains],
                 gravity, dt: float, max_velocity: float = 2.0, max_rate: float = 4.0,
                 max_tilt: float = np.pi / 4):
        self.mode = ControlMode.parse(mode)
        self.model = model
        self.gains = gains
        self.gravity = np.asarray(gravity, dtype=np.float64)
        self.dt = dt
        self.max_velocity = max_velocity
        self.max_rate = max_rate
        self.max_tilt = max_tilt
        self.alloc = None
        if self.mode is not ControlMode.ROTOR:
            if gains is None:
                raise ConfigError(f"{self.mode.value} control needs gains", key="gains")
            try:
                self.alloc = build_allocation(model)
            except AllocationError as e:
                raise ConfigError(str(e), key="task.control_mode")

    @property
    def action_dim(self) -> int:
        if self.mode is ControlMode.ROTOR:
            return self.model.rotor_action_dim
        return 4

    def __call__(self, state: BodyState, actions, memory: Optional[VelocityMemory] = None,
                 model: Optional[DroneModel] = None):
        """
        Returns (throttle targets, tilt targets or None, memory). `model` may
        be a batched, randomised copy; only its mass is read, the allocation
        stays the nominal one.
        """
        a = np.clip(actions, -1.0, 1.0)
        mass = np.asarray((model or self.model).mass)
        hover_thrust = mass * float(-self.gravity[2])
        n = self.model.num_rotors
        if self.mode is ControlMode.ROTOR:
            tilt = None
            if self.model.num_tilts:
                tilt = a[..., n:] * self.model.tilt_units.limit
            return 0.5 * (a[..., :n] + 1.0), tilt, memory
        if self.mode is ControlMode.RATE:
            throttle = rate_control(state, a[..., :3] * self.max_rate, (a[..., 3] + 1.0) * hover_thrust,
                                    self.gains, self.alloc)
        elif self.mode is ControlMode.ATTITUDE:
            target = attitude_command(a[..., :2] * self.max_tilt, a[..., 2] * np.pi)
            throttle = attitude_control(state, target, (a[..., 3] + 1.0) * hover_thrust, self.gains, self.alloc)
        else:
            if memory is None:
                memory = VelocityMemory.zeros(state.vel.shape[:-1])
            throttle, memory = velocity_control(
                state, a[..., :3] * self.max_velocity, a[..., 3] * np.pi, self.gains, self.alloc,
                mass, self.gravity, memory, self.dt)
        return throttle, None, memory
