"""
Quaternion / vector algebra and the rigid-body integrator.

Conventions:
  - quaternions are Hamilton, scalar first (w, x, y, z)
  - a quaternion q rotates body-frame vectors into the world frame
  - world frame is z-up; body frame is x-forward, y-left, z-up
  - every function accepts arrays with arbitrary leading (batch) dims:
    vectors are (..., 3), quaternions (..., 4)
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

GRAVITY = (0.0, 0.0, -9.81)


@dataclass(frozen=True)
class SimParams:
    dt_control: float = 0.016
    substeps: int = 4
    gravity: Sequence[float] = GRAVITY

    def __post_init__(self):
        if not self.dt_control > 0:
            raise ValueError(f"dt_control must be > 0, got {self.dt_control}")
        if int(self.substeps) < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        object.__setattr__(self, "substeps", int(self.substeps))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=np.float64))

    @property
    def physics_dt(self) -> float:
        return self.dt_control / self.substeps


@dataclass
class BodyState:
    """Pose and twist of one rigid body, or a batch of them."""
    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    omega: np.ndarray

    @classmethod
    def at_rest(cls, shape=(), pos=(0.0, 0.0, 0.0)):
        shape = tuple(shape)
        return cls(
            pos=np.broadcast_to(np.asarray(pos, dtype=np.float64), shape + (3,)).copy(),
            quat=np.broadcast_to(IDENTITY_QUAT, shape + (4,)).copy(),
            vel=np.zeros(shape + (3,)),
            omega=np.zeros(shape + (3,)),
        )

    def copy(self) -> "BodyState":
        return BodyState(self.pos.copy(), self.quat.copy(), self.vel.copy(), self.omega.copy())

    def __getitem__(self, idx) -> "BodyState":
        return BodyState(self.pos[idx], self.quat[idx], self.vel[idx], self.omega[idx])

    def assign(self, idx, other: "BodyState") -> None:
        self.pos[idx] = other.pos
        self.quat[idx] = other.quat
        self.vel[idx] = other.vel
        self.omega[idx] = other.omega


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def cross(a, b):
    # np.cross has noticeable overhead on small trailing dims
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def dot(a, b):
    return (a * b).sum(axis=-1)


def norm(v):
    return np.sqrt(dot(v, v))


def quat_mul(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    return q / norm(q)[..., None]


def quat_rotate(q, v):
    """R(q) v, using v + 2w (u x v) + 2 u x (u x v)."""
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * cross(u, v)
    return v + w * t + cross(u, t)


def quat_rotate_inverse(q, v):
    return quat_rotate(quat_conj(q), v)


def quat_to_matrix(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def quat_exp(rotvec):
    """Unit quaternion of the rotation vector `rotvec` (axis * angle)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = norm(rotvec)
    # sin(angle/2)/angle written with sinc so angle -> 0 needs no branch
    scale = 0.5 * np.sinc(angle / (2.0 * np.pi))
    return np.concatenate([np.cos(0.5 * angle)[..., None], scale[..., None] * rotvec], axis=-1)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / norm(axis)[..., None]
    return quat_exp(axis * np.asarray(angle, dtype=np.float64)[..., None])


def quat_from_yaw(yaw):
    half = 0.5 * np.asarray(yaw, dtype=np.float64)
    zeros = np.zeros_like(half)
    return np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1)


def yaw_from_quat(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def body_z_axis(q):
    """Third column of R(q): the thrust direction in the world frame."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)], axis=-1)


def tilt_angle(q):
    """Angle between the body z axis and world z."""
    return np.arccos(np.clip(body_z_axis(q)[..., 2], -1.0, 1.0))


def quat_integrate(q, omega_body, dt: float):
    """q <- q (x) exp(1/2 omega dt), renormalised. dt == 0 returns q untouched."""
    if dt == 0:
        return np.array(q, dtype=np.float64, copy=True)
    dq = quat_exp(np.asarray(omega_body) * dt)
    return quat_normalize(quat_mul(q, dq))


def integrate_rigid_body(state: BodyState, accel_world, omega_dot_body, dt: float) -> BodyState:
    """Semi-implicit Euler: velocities first, then pose from the new velocities."""
    vel = state.vel + accel_world * dt
    omega = state.omega + omega_dot_body * dt
    return BodyState(
        pos=state.pos + vel * dt,
        quat=quat_integrate(state.quat, omega, dt),
        vel=vel,
        omega=omega,
    )
