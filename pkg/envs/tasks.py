"""
Task environments built on EnvBatch.

    Hover             reach and hold a target position
    Track             follow a figure-eight reference, observing 4 future points
    FlyThrough        pass a rectangular gate on the way to a waypoint
    PayloadHover      hover with a payload hanging from a rigid link
    InvPendulumHover  hover while balancing a payload on top of a rigid link
    Formation         several drones hold a formation template (shared reward)
"""
from typing import Any, Dict, Optional, Union

import numpy as np

from dynamics.math_core import norm
from envs.base import EnvBatch, TaskOutcome, hover_reward
from envs.task_spec import TaskKind, TaskSpec
from envs.trajectory import Lemniscate


def _no_flags(n: int) -> np.ndarray:
    return np.zeros(n, dtype=bool)


class Hover(EnvBatch):
    kind = TaskKind.HOVER

    def _outcome(self, sl, actions, prev_pos) -> TaskOutcome:
        error = self._targets(sl) - self.body.pos[sl]
        rewards = hover_reward(error, self.body.quat[sl], self.body.omega[sl], actions,
                               self.prev_action[sl], self.spec.reward)
        n = rewards.shape[0]
        return TaskOutcome(rewards, _no_flags(n), norm(error).mean(axis=-1), _no_flags(n), _no_flags(n))


class Track(Hover):
    kind = TaskKind.TRACK

    def __init__(self, spec: TaskSpec, *args, **kwargs):
        self.reference = Lemniscate(spec.trajectory)
        self.lookahead = np.asarray(spec.trajectory.lookahead, dtype=np.float64)
        super().__init__(spec, *args, **kwargs)

    @property
    def target_obs_dim(self) -> int:
        return 3 * len(self.lookahead)

    def _start_positions(self) -> np.ndarray:
        return np.broadcast_to(self.reference.position(0.0), (self.num_agents, 3))

    def _targets(self, sl) -> np.ndarray:
        t = self.step_count[sl] * self.dt
        return np.broadcast_to(self.reference.position(t)[:, None, :], self.body.pos[sl].shape)

    def _target_obs(self, sl) -> np.ndarray:
        t = self.step_count[sl][:, None] * self.dt + self.lookahead         # (n, L)
        points = self.reference.position(t)                                 # (n, L, 3)
        rel = points[:, None, :, :] - self.body.pos[sl][:, :, None, :]      # (n, A, L, 3)
        return rel.reshape(rel.shape[0], rel.shape[1], -1)


class FlyThrough(Hover):
    kind = TaskKind.FLY_THROUGH

    def __init__(self, spec: TaskSpec, num_envs: int, *args, **kwargs):
        self.passed = np.zeros(num_envs, dtype=bool)
        self.gate = spec.gate
        super().__init__(spec, num_envs, *args, **kwargs)

    @property
    def extra_obs_dim(self) -> int:
        return 3

    def _start_positions(self) -> np.ndarray:
        return np.broadcast_to(self.gate.start, (self.num_agents, 3))

    def _targets(self, sl) -> np.ndarray:
        return np.broadcast_to(self.gate.waypoint, self.body.pos[sl].shape)

    def _observe_extra(self, sl) -> np.ndarray:
        gate_center = np.array([self.gate.x, self.gate.center[0], self.gate.center[1]])
        return gate_center - self.body.pos[sl]

    def _reset_task(self, i, rng) -> None:
        self.passed[i] = False

    def gate_crossing(self, prev_pos, pos):
        """
        (through, hit) flags for the segment prev_pos -> pos against the gate
        plane: `through` if it crosses inside the opening, `hit` if it
        crosses the wall around it.
        """
        before = prev_pos[..., 0] - self.gate.x
        after = pos[..., 0] - self.gate.x
        crossed = (before < 0.0) != (after < 0.0)
        span = np.where(crossed, before - after, 1.0)
        frac = np.where(crossed, before / span, 0.0)
        point = prev_pos + frac[..., None] * (pos - prev_pos)
        through = crossed & self.gate.contains(point[..., 1], point[..., 2])
        hit = crossed & self.gate.on_wall(point[..., 1], point[..., 2])
        return through, hit

    def _outcome(self, sl, actions, prev_pos) -> TaskOutcome:
        base = super()._outcome(sl, actions, prev_pos)
        through, hit = self.gate_crossing(prev_pos, self.body.pos[sl])
        first = through & ~self.passed[sl][:, None]
        weights = self.spec.reward
        rewards = base.rewards + weights.gate_bonus * first - weights.collision_penalty * hit
        self.passed[sl] |= through.any(axis=-1)
        collision = hit.any(axis=-1)
        return TaskOutcome(rewards, collision, base.pos_error, collision, self.passed[sl].copy())


class PayloadHover(Hover):
    kind = TaskKind.PAYLOAD_HOVER

    @property
    def extra_obs_dim(self) -> int:
        return 6

    def _observe_extra(self, sl) -> np.ndarray:
        return self.link_observation(sl)


class InvPendulumHover(PayloadHover):
    kind = TaskKind.INV_PENDULUM_HOVER


class Formation(Hover):
    kind = TaskKind.FORMATION

    def __init__(self, spec: TaskSpec, *args, **kwargs):
        offsets = np.asarray(spec.formation_offsets, dtype=np.float64)
        self.slots = offsets - offsets.mean(axis=0)
        count = len(offsets)
        self.neighbors = np.array([[j for j in range(count) if j != i] for i in range(count)])
        self.pairs = np.triu_indices(count, k=1)
        super().__init__(spec, *args, **kwargs)

    @property
    def extra_obs_dim(self) -> int:
        return 6 * (self.num_agents - 1)

    def _start_positions(self) -> np.ndarray:
        return self.spec.start + self.slots

    def _targets(self, sl) -> np.ndarray:
        return np.broadcast_to(self.spec.target + self.slots, self.body.pos[sl].shape)

    def _observe_extra(self, sl) -> np.ndarray:
        pos, vel = self.body.pos[sl], self.body.vel[sl]
        rel_pos = pos[:, self.neighbors, :] - pos[:, :, None, :]     # (n, A, A-1, 3)
        rel_vel = vel[:, self.neighbors, :] - vel[:, :, None, :]
        blocks = np.concatenate([rel_pos, rel_vel], axis=-1)
        return blocks.reshape(blocks.shape[0], self.num_agents, -1)

    def formation_error(self, pos) -> np.ndarray:
        """Mean distance of each drone from its template slot after centroid alignment."""
        centroid = pos.mean(axis=-2, keepdims=True)
        return norm(pos - centroid - self.slots).mean(axis=-1)

    def _outcome(self, sl, actions, prev_pos) -> TaskOutcome:
        pos = self.body.pos[sl]
        weights = self.spec.reward
        form_err = self.formation_error(pos)
        centroid_err = norm(pos.mean(axis=-2) - self.spec.target)
        gaps = norm(pos[:, self.pairs[0], :] - pos[:, self.pairs[1], :])
        collision = (gaps < self.spec.termination.safe_distance).any(axis=-1)
        shared = (np.exp(-form_err) + weights.formation_centroid * np.exp(-centroid_err)
                  - weights.formation_collision * collision)
        rewards = np.broadcast_to(shared[:, None], pos.shape[:2]).copy()
        return TaskOutcome(rewards, collision, form_err, collision, _no_flags(len(form_err)))


TASKS = {cls.kind: cls for cls in (Hover, Track, FlyThrough, PayloadHover, InvPendulumHover, Formation)}


def make_env(task: Union[TaskSpec, Dict[str, Any]], num_envs: int, seed: int = 0,
             num_workers: Optional[int] = None, registry_path=None) -> EnvBatch:
    spec = task if isinstance(task, TaskSpec) else TaskSpec.from_config(task)
    return TASKS[spec.kind](spec, num_envs, seed=seed, num_workers=num_workers,
                            registry_path=registry_path)
