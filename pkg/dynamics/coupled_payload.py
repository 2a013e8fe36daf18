"""
Drone rigidly linked to a point-mass payload hanging below it (`Payload`)
or balanced above it (`InvPendulum`).

The link is attached at the drone's centre of mass, so it exerts no torque
on the airframe. The system is integrated in generalised coordinates
(drone pose + link direction), so the link length holds by construction.

With drone mass M, payload mass m, link length L, link direction d and all
non-gravity forces on the drone F_o:

    T     = mu (L |d'|^2 - d . F_o / M),        mu = m M / (m + M)
    a_drone = g + F_o / M + T d / M
    link_omega' = -(d x F_o) / (M L)
"""
import enum
from dataclasses import dataclass

import numpy as np

from config_utils import ConfigError, as_float
from dynamics.airframe import DroneModel, MotorState, drone_accelerations, motor_step
from dynamics.math_core import (
    BodyState,
    SimParams,
    cross,
    dot,
    integrate_rigid_body,
    norm,
    quat_exp,
    quat_rotate,
)


class Direction(str, enum.Enum):
    BELOW = "below"
    ABOVE = "above"

    @property
    def unit(self) -> np.ndarray:
        return np.array([0.0, 0.0, -1.0 if self is Direction.BELOW else 1.0])


@dataclass(frozen=True, eq=False)
class LinkConfig:
    length: np.ndarray            # m, scalar or batched (...)
    payload_mass: np.ndarray      # kg, scalar or batched (...)
    direction: Direction = Direction.BELOW

    def __post_init__(self):
        length = np.asarray(self.length, dtype=np.float64)
        mass = np.asarray(self.payload_mass, dtype=np.float64)
        if not np.all(length > 0):
            raise ValueError("link length must be > 0")
        if not np.all(mass >= 0):
            raise ValueError("payload mass must be >= 0")
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "payload_mass", mass)
        object.__setattr__(self, "direction", Direction(self.direction))

    @classmethod
    def from_dict(cls, data, drone_mass: float, direction: Direction) -> "LinkConfig":
        data = data or {}
        length = as_float(data.get("length", 0.6), "link.length", positive=True)
        if "payload_mass" in data:
            mass = as_float(data["payload_mass"], "link.payload_mass", non_negative=True)
        else:
            ratio = as_float(data.get("mass_ratio", 0.15), "link.mass_ratio", non_negative=True)
            mass = ratio * float(drone_mass)
        try:
            return cls(length=length, payload_mass=mass, direction=direction)
        except ValueError as e:
            raise ConfigError(str(e), key="link")

    def broadcast(self, shape) -> "LinkConfig":
        shape = tuple(shape)
        return LinkConfig(np.broadcast_to(self.length, shape).copy(),
                          np.broadcast_to(self.payload_mass, shape).copy(), self.direction)


@dataclass
class PendulumState:
    drone: BodyState
    link_dir: np.ndarray      # (..., 3) unit, world frame, drone -> payload
    link_omega: np.ndarray    # (..., 3) world frame, perpendicular to link_dir

    @classmethod
    def at_rest(cls, shape=(), pos=(0.0, 0.0, 0.0), direction: Direction = Direction.BELOW):
        shape = tuple(shape)
        return cls(
            drone=BodyState.at_rest(shape, pos),
            link_dir=np.broadcast_to(Direction(direction).unit, shape + (3,)).copy(),
            link_omega=np.zeros(shape + (3,)),
        )

    def copy(self) -> "PendulumState":
        return PendulumState(self.drone.copy(), self.link_dir.copy(), self.link_omega.copy())

    def assign(self, idx, other: "PendulumState") -> None:
        self.drone.assign(idx, other.drone)
        self.link_dir[idx] = other.link_dir
        self.link_omega[idx] = other.link_omega


def payload_position(state: PendulumState, cfg: LinkConfig) -> np.ndarray:
    return state.drone.pos + cfg.length[..., None] * state.link_dir


def payload_velocity(state: PendulumState, cfg: LinkConfig) -> np.ndarray:
    return state.drone.vel + cfg.length[..., None] * cross(state.link_omega, state.link_dir)


def link_tilt(state: PendulumState, cfg: LinkConfig) -> np.ndarray:
    """Angle between the link and its nominal direction (straight down or straight up)."""
    cos = state.link_dir[..., 2] * cfg.direction.unit[2]
    return np.arccos(np.clip(cos, -1.0, 1.0))


def mechanical_energy(state: PendulumState, model: DroneModel, cfg: LinkConfig, gravity) -> np.ndarray:
    """Kinetic plus potential energy of airframe and payload."""
    g = -np.asarray(gravity)[2]
    drone = state.drone
    pv = payload_velocity(state, cfg)
    pz = payload_position(state, cfg)[..., 2]
    kinetic = (0.5 * model.mass * dot(drone.vel, drone.vel)
               + 0.5 * dot(drone.omega, model.inertia * drone.omega)
               + 0.5 * cfg.payload_mass * dot(pv, pv))
    return kinetic + g * (model.mass * drone.pos[..., 2] + cfg.payload_mass * pz)


def coupled_accelerations(state: PendulumState, motors: MotorState, model: DroneModel,
                          cfg: LinkConfig, external_force, gravity):
    """Returns (drone linear accel, drone body angular accel, link angular accel)."""
    accel, omega_dot = drone_accelerations(state.drone, motors, model, external_force, gravity)
    mass = np.asarray(model.mass)[..., None]
    length = cfg.length[..., None]
    d = state.link_dir
    # all non-gravity forces on the airframe
    f_other = (accel - gravity) * mass
    d_dot = cross(state.link_omega, d)
    reduced = (cfg.payload_mass * model.mass / (cfg.payload_mass + model.mass))[..., None]
    tension = reduced * (length * dot(d_dot, d_dot)[..., None] - dot(d, f_other)[..., None] / mass)
    accel = accel + tension * d / mass
    link_omega_dot = -cross(d, f_other) / (mass * length)
    return accel, omega_dot, link_omega_dot


def step_coupled(state: PendulumState, motors: MotorState, target, model: DroneModel,
                 cfg: LinkConfig, external_force, params: SimParams):
    """
    One control step of the linked system. The link direction is re-normalised
    and its angular velocity re-projected every sub-step.
    Returns (state, motors).
    """
    dt = params.physics_dt
    if target is None:
        target = motors
    external_force = np.asarray(external_force, dtype=np.float64)
    drone, d, w = state.drone, state.link_dir, state.link_omega
    for _ in range(params.substeps):
        motors = motor_step(motors, target, dt, model)
        accel, omega_dot, w_dot = coupled_accelerations(
            PendulumState(drone, d, w), motors, model, cfg, external_force, params.gravity)
        drone = integrate_rigid_body(drone, accel, omega_dot, dt)
        w = w + w_dot * dt
        d = quat_rotate(quat_exp(w * dt), d)
        d = d / norm(d)[..., None]
        w = w - dot(w, d)[..., None] * d
    return PendulumState(drone, d, w), motors
