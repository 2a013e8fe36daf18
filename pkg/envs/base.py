"""
EnvBatch: N independent task environments stored as structure-of-arrays.

Every per-environment array has leading shape (N, A) with A the number of
drones per environment. Slots never read each other's rows, so a step can
be split over worker threads by slot range; only element-wise numpy ops
touch the environment axis, which keeps results identical for any worker
count.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from gymnasium import spaces

from config_utils import num_workers as configured_workers
from dynamics.airframe import MotorState, get_model, step_drone
from dynamics.control import CascadeController, ControlMode, VelocityMemory, load_gains
from dynamics.coupled_payload import (
    Direction,
    LinkConfig,
    PendulumState,
    link_tilt,
    payload_velocity,
    step_coupled,
)
from dynamics.math_core import (
    body_z_axis,
    norm,
    quat_from_axis_angle,
    quat_rotate,
    tilt_angle,
)
from dynamics.randomization import RandomizationSpec, sample_link, sample_startup, wind_step
from envs.task_spec import TaskKind, TaskSpec

logger = logging.getLogger(__name__)


class ActionShapeError(ValueError):
    """Actions passed to `EnvBatch.step` do not have shape (N, A, act_dim)."""


@dataclass
class StepResult:
    observations: np.ndarray   # (N, A, obs_dim)
    rewards: np.ndarray        # (N, A)
    terminated: np.ndarray     # (N,)
    truncated: np.ndarray      # (N,)
    info: Dict[str, np.ndarray]


@dataclass
class TaskOutcome:
    """What a task's reward function reports for a slice of slots."""
    rewards: np.ndarray        # (n, A)
    terminated: np.ndarray     # (n,)
    pos_error: np.ndarray      # (n,)
    collision: np.ndarray      # (n,)
    success: np.ndarray        # (n,)


def hover_reward(error, quat, omega, action, prev_action, weights) -> np.ndarray:
    """
    exp(-|e|) + w_up max(b_z . e_z, 0) + w_spin exp(-|omega|) - w_a |a - a_prev|^2,
    per drone. Bounded above by 1 + w_up + w_spin.
    """
    upright = np.maximum(body_z_axis(quat)[..., 2], 0.0)
    delta = action - prev_action
    return (np.exp(-norm(error))
            + weights.upright * upright
            + weights.spin * np.exp(-norm(omega))
            - weights.action * (delta * delta).sum(axis=-1))


def random_tilt(rng: np.random.Generator, max_angle: float, count: int) -> np.ndarray:
    """Quaternions tilted by at most `max_angle` about random horizontal axes."""
    heading = rng.uniform(0.0, 2.0 * np.pi, size=count)
    angle = rng.uniform(0.0, max_angle, size=count)
    axis = np.stack([np.cos(heading), np.sin(heading), np.zeros(count)], axis=-1)
    return quat_from_axis_angle(axis, angle)


class EnvBatch:
    """
    Base class for batched tasks. Subclasses set `kind` and implement
    `_targets`, `_observe_extra`, `extra_obs_dim` and `_outcome`.
    """

    kind: TaskKind = None

    def __init__(self, spec: TaskSpec, num_envs: int, seed: int = 0,
                 num_workers: Optional[int] = None, registry_path=None):
        if num_envs < 1:
            raise ValueError(f"num_envs must be >= 1, got {num_envs}")
        self.spec = spec
        self.num_envs = num_envs
        self.num_agents = spec.num_drones
        self.params = spec.sim
        self.dt = spec.sim.dt_control
        self.gravity = spec.sim.gravity
        self.g = float(-self.gravity[2])
        self.seed = int(seed)

        self.base_model = get_model(spec.model_name, spec.model_overrides, registry_path)
        gains = None
        if spec.control_mode is not ControlMode.ROTOR:
            gains = load_gains(spec.model_name, registry_path)
        self.controller = CascadeController(spec.control_mode, self.base_model, gains,
                                            self.gravity, self.dt)
        self.randomization = RandomizationSpec.from_dict(spec.randomization,
                                                         float(self.base_model.mass), self.g)

        shape = (num_envs, self.num_agents)
        self.model = self.base_model.broadcast(shape)
        self.base_link = None
        self.link = None
        if spec.kind.has_link:
            direction = Direction.ABOVE if spec.kind is TaskKind.INV_PENDULUM_HOVER else Direction.BELOW
            self.base_link = LinkConfig.from_dict(spec.link, float(self.base_model.mass), direction)
            self.link = self.base_link.broadcast(shape)

        direction = self.base_link.direction if self.base_link is not None else Direction.BELOW
        pendulum = PendulumState.at_rest(shape, direction=direction)
        self.body = pendulum.drone
        self.link_dir = pendulum.link_dir
        self.link_omega = pendulum.link_omega
        self.motors = MotorState.zeros(self.base_model, shape)
        self.memory = VelocityMemory.zeros(shape)
        self.wind = np.zeros(shape + (3,))
        self.prev_action = np.zeros(shape + (self.action_dim,))
        self.step_count = np.zeros(num_envs, dtype=np.int64)
        self.episode = np.zeros(num_envs, dtype=np.int64)
        self.episode_return = np.zeros(num_envs)
        self.rngs: List[np.random.Generator] = [None] * num_envs

        self.num_workers = min(configured_workers(num_workers), num_envs)
        self._pool = ThreadPoolExecutor(self.num_workers) if self.num_workers > 1 else None
        bounds = np.linspace(0, num_envs, self.num_workers + 1).astype(int)
        self._slices = [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

        self.observation_space = spaces.Box(-np.inf, np.inf, shape=(self.num_agents, self.obs_dim),
                                            dtype=np.float64)
        self.action_space = spaces.Box(-1.0, 1.0, shape=(self.num_agents, self.action_dim),
                                       dtype=np.float64)
        logger.info("env ready task=%s model=%s mode=%s envs=%d agents=%d workers=%d",
                    self.kind.value, spec.model_name, spec.control_mode.value, num_envs,
                    self.num_agents, self.num_workers)
        self._observations = self.reset()

    # ------------------------------------------------------
    # Dimensions
    # ------------------------------------------------------
    @property
    def action_dim(self) -> int:
        return self.controller.action_dim

    @property
    def target_obs_dim(self) -> int:
        return 3

    @property
    def extra_obs_dim(self) -> int:
        return 0

    @property
    def obs_dim(self) -> int:
        model = self.base_model
        return self.target_obs_dim + 4 + 3 + 3 + model.num_rotors + model.num_tilts + 1 + self.extra_obs_dim

    # ------------------------------------------------------
    # Task hooks
    # ------------------------------------------------------
    def _start_positions(self) -> np.ndarray:
        """(A, 3) nominal start of every drone."""
        return np.broadcast_to(self.spec.start, (self.num_agents, 3))

    def _targets(self, sl: slice) -> np.ndarray:
        """(n, A, 3) position each drone is rewarded for reaching."""
        return np.broadcast_to(self.spec.target, self.body.pos[sl].shape)

    def _target_obs(self, sl: slice) -> np.ndarray:
        return self._targets(sl) - self.body.pos[sl]

    def _observe_extra(self, sl: slice) -> Optional[np.ndarray]:
        return None

    def _reset_task(self, i: int, rng: np.random.Generator) -> None:
        pass

    def _outcome(self, sl: slice, actions: np.ndarray, prev_pos: np.ndarray) -> TaskOutcome:
        raise NotImplementedError

    # ------------------------------------------------------
    # Reset
    # ------------------------------------------------------
    def _slot_rng(self, i: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, i, int(self.episode[i])]))

    def _reset_slot(self, i: int) -> None:
        rng = self._slot_rng(i)
        self.episode[i] += 1
        self.rngs[i] = rng
        A = self.num_agents
        init = self.spec.init

        # initial state draws come first, randomisation second
        half = 0.5 * init.pos_box
        self.body.pos[i] = self._start_positions() + rng.uniform(-half, half, size=(A, 3))
        self.body.quat[i] = random_tilt(rng, init.max_tilt, A)
        self.body.vel[i] = rng.normal(0.0, init.vel_std, size=(A, 3))
        self.body.omega[i] = rng.normal(0.0, init.vel_std, size=(A, 3))
        if self.link is not None:
            q_link = random_tilt(rng, init.link_tilt, A)
            self.link_dir[i] = quat_rotate(q_link, np.broadcast_to(self.base_link.direction.unit, (A, 3)))
            self.link_omega[i] = 0.0
        self._reset_task(i, rng)

        for a in range(A):
            model = sample_startup(self.randomization, rng, self.base_model)
            self.model.assign((i, a), model)
            extra_mass = 0.0
            if self.link is not None:
                link = sample_link(self.randomization, rng, self.base_link)
                self.link.length[i, a] = link.length
                self.link.payload_mass[i, a] = link.payload_mass
                extra_mass = float(link.payload_mass)
            self.motors.throttle[i, a] = model.hover_throttle(self.g, extra_mass)
        if self.motors.tilt is not None:
            self.motors.tilt[i] = 0.0

        self.memory.reset(i)
        self.wind[i] = 0.0
        self.prev_action[i] = 0.0
        self.step_count[i] = 0
        self.episode_return[i] = 0.0

    def reset(self, env_indices=None, seed: Optional[int] = None) -> np.ndarray:
        """
        Re-initialise the listed slots (all by default) and return the full
        (N, A, obs_dim) observation. Passing `seed` restarts the episode
        counters of those slots, so the same seed reproduces the same starts.
        """
        indices = range(self.num_envs) if env_indices is None else np.atleast_1d(env_indices)
        if seed is not None:
            self.seed = int(seed)
        for i in indices:
            i = int(i)
            if not 0 <= i < self.num_envs:
                raise IndexError(f"env index {i} out of range for {self.num_envs} envs")
            if seed is not None:
                self.episode[i] = 0
            self._reset_slot(i)
        self._observations = self.observe()
        return self._observations

    # ------------------------------------------------------
    # Observation
    # ------------------------------------------------------
    def observe(self, sl: slice = slice(None)) -> np.ndarray:
        n_rows = self.step_count[sl].shape[0]
        remaining = 1.0 - self.step_count[sl] / self.spec.episode_len
        blocks = [
            self._target_obs(sl).reshape(n_rows, self.num_agents, -1),
            self.body.quat[sl],
            self.body.vel[sl],
            self.body.omega[sl],
            self.motors.throttle[sl],
            *self._tilt_obs(sl),
            np.broadcast_to(remaining[:, None, None], (n_rows, self.num_agents, 1)),
        ]
        extra = self._observe_extra(sl)
        if extra is not None:
            blocks.append(extra)
        return np.concatenate(blocks, axis=-1)

    def _tilt_obs(self, sl: slice) -> List[np.ndarray]:
        # arm angles scaled to the [-1, 1] command range
        if self.motors.tilt is None:
            return []
        return [self.motors.tilt[sl] / self.base_model.tilt_units.limit]

    def link_observation(self, sl: slice) -> np.ndarray:
        """Link direction and payload velocity relative to the drone."""
        pend = PendulumState(self.body[sl], self.link_dir[sl], self.link_omega[sl])
        link = LinkConfig(self.link.length[sl], self.link.payload_mass[sl], self.link.direction)
        rel_vel = payload_velocity(pend, link) - self.body.vel[sl]
        return np.concatenate([self.link_dir[sl], rel_vel], axis=-1)

    # ------------------------------------------------------
    # Step
    # ------------------------------------------------------
    def _common_termination(self, sl: slice) -> np.ndarray:
        term = self.spec.termination
        pos = self.body.pos[sl]
        crash_height = term.crash_height
        if self.kind is TaskKind.PAYLOAD_HOVER:
            crash_height = self.link.length[sl] + term.crash_height
        failed = pos[..., 2] < crash_height
        if self.kind is not TaskKind.INV_PENDULUM_HOVER:
            failed |= tilt_angle(self.body.quat[sl]) > term.max_tilt
        else:
            link = LinkConfig(self.link.length[sl], self.link.payload_mass[sl], self.link.direction)
            pend = PendulumState(self.body[sl], self.link_dir[sl], self.link_omega[sl])
            failed |= link_tilt(pend, link) > term.pendulum_max_tilt
        failed |= norm(pos - self.spec.workspace_center) > term.workspace_radius
        failed |= ~np.isfinite(pos).all(axis=-1)
        return failed.any(axis=-1)

    def _step_slice(self, sl: slice, actions: np.ndarray, out: Dict[str, np.ndarray]) -> None:
        body = self.body[sl]
        prev_pos = body.pos.copy()
        model = self.model.row(sl)
        motors = MotorState(self.motors.throttle[sl],
                            None if self.motors.tilt is None else self.motors.tilt[sl])
        memory = VelocityMemory(self.memory.prev_vel[sl], self.memory.accel[sl],
                                self.memory.initialized[sl])

        throttle, tilt, memory = self.controller(body, actions, memory, model)
        target = MotorState(throttle, tilt if tilt is not None else motors.tilt)

        if self.randomization.wind.enabled:
            self.wind[sl] = wind_step(self.wind[sl], self.randomization, self.rngs[sl], self.dt)
        external = self.wind[sl]

        if self.link is not None:
            link = LinkConfig(self.link.length[sl], self.link.payload_mass[sl], self.link.direction)
            pend = PendulumState(body, self.link_dir[sl], self.link_omega[sl])
            pend, motors = step_coupled(pend, motors, target, model, link, external, self.params)
            new_body = pend.drone
            self.link_dir[sl] = pend.link_dir
            self.link_omega[sl] = pend.link_omega
        else:
            new_body, motors = step_drone(body, motors, target, model, external, self.params)

        self.body.assign(sl, new_body)
        self.motors.throttle[sl] = motors.throttle
        if motors.tilt is not None:
            self.motors.tilt[sl] = motors.tilt
        if self.controller.mode is ControlMode.VELOCITY:
            self.memory.prev_vel[sl] = memory.prev_vel
            self.memory.accel[sl] = memory.accel
            self.memory.initialized[sl] = memory.initialized
        self.step_count[sl] += 1

        outcome = self._outcome(sl, actions, prev_pos)
        self.prev_action[sl] = actions
        terminated = outcome.terminated | self._common_termination(sl)
        out["rewards"][sl] = outcome.rewards
        out["terminated"][sl] = terminated
        out["truncated"][sl] = ~terminated & (self.step_count[sl] >= self.spec.episode_len)
        out["pos_error"][sl] = outcome.pos_error
        out["collision"][sl] = outcome.collision
        out["success"][sl] = outcome.success
        out["observations"][sl] = self.observe(sl)

    def step(self, actions) -> StepResult:
        actions = np.asarray(actions, dtype=np.float64)
        expected = (self.num_envs, self.num_agents, self.action_dim)
        if actions.shape != expected:
            raise ActionShapeError(f"actions must have shape {expected}, got {actions.shape}")
        actions = np.clip(actions, -1.0, 1.0)

        N, A = self.num_envs, self.num_agents
        out = {
            "observations": np.empty((N, A, self.obs_dim)),
            "rewards": np.empty((N, A)),
            "terminated": np.empty(N, dtype=bool),
            "truncated": np.empty(N, dtype=bool),
            "pos_error": np.empty(N),
            "collision": np.empty(N, dtype=bool),
            "success": np.empty(N, dtype=bool),
        }
        if self._pool is None:
            for sl in self._slices:
                self._step_slice(sl, actions[sl], out)
        else:
            futures = [self._pool.submit(self._step_slice, sl, actions[sl], out) for sl in self._slices]
            for f in futures:
                f.result()

        self.episode_return += out["rewards"].mean(axis=-1)
        done = out["terminated"] | out["truncated"]
        episode_return = np.full(N, np.nan)
        episode_length = np.full(N, np.nan)
        for i in np.flatnonzero(done):
            episode_return[i] = self.episode_return[i]
            episode_length[i] = self.step_count[i]
            self._reset_slot(int(i))
            out["observations"][i] = self.observe(slice(i, i + 1))[0]

        self._observations = out["observations"]
        info = {k: out[k] for k in ("pos_error", "collision", "success")}
        info["episode_return"] = episode_return
        info["episode_length"] = episode_length
        return StepResult(out["observations"], out["rewards"], out["terminated"], out["truncated"], info)

    # ------------------------------------------------------
    # Misc
    # ------------------------------------------------------
    @property
    def observations(self) -> np.ndarray:
        return self._observations

    def snapshot(self, i: int) -> List[Dict[str, list]]:
        """Plain-list state of every drone in slot `i`, for trajectory records."""
        drones = []
        for a in range(self.num_agents):
            record = {
                "pos": self.body.pos[i, a].tolist(),
                "quat": self.body.quat[i, a].tolist(),
                "vel": self.body.vel[i, a].tolist(),
                "omega": self.body.omega[i, a].tolist(),
                "throttle": self.motors.throttle[i, a].tolist(),
            }
            if self.link is not None:
                record["link_dir"] = self.link_dir[i, a].tolist()
            drones.append(record)
        return drones

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
