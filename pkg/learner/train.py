"""
Training, evaluation and trajectory recording on top of the batched envs.

One policy is shared by every drone: each (env, agent) transition is a PPO
sample. With `centralized_critic` the value net sees the normalised
observations of all agents of the env, concatenated in agent order.
"""
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from envs.base import EnvBatch
from envs.task_spec import TaskSpec
from envs.tasks import make_env
from export_utils import RunExporter, TrajectoryWriter
from learner.checkpoint import load_checkpoint, save_checkpoint
from learner.mlp import NetShape, PolicyParams, RunningMeanStd, policy_forward, squashed_log_prob
from learner.ppo import Adam, NonFiniteLossError, PpoConfig, RolloutBuffer, ppo_update

logger = logging.getLogger(__name__)


def make_shape(env: EnvBatch, cfg: PpoConfig) -> NetShape:
    critic_in = env.obs_dim
    if cfg.centralized_critic and env.num_agents > 1:
        critic_in = env.obs_dim * env.num_agents
    return NetShape(obs_dim=env.obs_dim, act_dim=env.action_dim, critic_in_dim=critic_in,
                    hidden=cfg.hidden, n_hidden=cfg.n_hidden)


def critic_input(norm_obs: np.ndarray, shape: NetShape) -> np.ndarray:
    """(N, A, critic_in_dim): own observation, or every agent's when the critic is centralised."""
    N, A, d = norm_obs.shape
    if shape.critic_in_dim == d:
        return norm_obs
    return np.broadcast_to(norm_obs.reshape(N, 1, A * d), (N, A, A * d))


@dataclass
class Policy:
    """Parameters plus the observation statistics they were trained with."""
    params: PolicyParams
    obs_rms: RunningMeanStd

    def act(self, obs: np.ndarray, rng: Optional[np.random.Generator] = None):
        """
        Sample pre-tanh actions for (N, A, obs_dim) observations, or take the
        mean when `rng` is None. Returns a dict of (N, A, ...) arrays.
        """
        N, A, d = obs.shape
        shape = self.params.shape
        norm_obs = self.obs_rms.normalize(obs)
        c_obs = critic_input(norm_obs, shape)
        mean, log_std, value = policy_forward(self.params, norm_obs.reshape(N * A, d),
                                              c_obs.reshape(N * A, shape.critic_in_dim))
        if rng is None:
            u = mean
        else:
            u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return {
            "obs": norm_obs,
            "critic_obs": c_obs,
            "u": u.reshape(N, A, -1),
            "action": np.tanh(u).reshape(N, A, -1),
            "log_prob": squashed_log_prob(u, mean, log_std).reshape(N, A),
            "value": value.reshape(N, A),
        }


@dataclass
class TrainResult:
    policy: Policy
    curves: pd.DataFrame
    step: int


def train(config: Dict[str, Any], total_steps: int, seed: int = 0, out_dir=None,
          num_envs: int = 64, num_workers: Optional[int] = None, resume=None,
          registry_path=None) -> TrainResult:
    """
    Alternate rollouts of `rollout_len` steps with PPO updates until
    `total_steps` env steps (counted per env, not per agent) have been
    collected. Curves go to `out_dir/curves.csv` row by row; with `resume`
    the step counter continues from the checkpoint and the curve file is
    appended to.
    """
    spec = TaskSpec.from_config(config)
    cfg = PpoConfig.from_dict(config.get("ppo"))
    exporter = RunExporter(out_dir) if out_dir is not None else None
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xACE]))

    env = make_env(spec, num_envs, seed=seed, num_workers=num_workers, registry_path=registry_path)
    try:
        shape = make_shape(env, cfg)
        global_step = 0
        if resume is not None:
            params, obs_rms, global_step = load_checkpoint(resume, expected=shape)
            logger.info("resumed checkpoint=%s step=%d", resume, global_step)
        else:
            params = PolicyParams.initialize(shape, rng, init_log_std=cfg.init_log_std)
            obs_rms = RunningMeanStd(shape.obs_dim)
        policy = Policy(params, obs_rms)
        optimizer = Adam(shape.num_params, cfg.lr)

        T, N, A = cfg.rollout_len, env.num_envs, env.num_agents
        steps_per_update = T * N
        n_updates = math.ceil(max(total_steps - global_step, 0) / steps_per_update)
        buffer = RolloutBuffer.allocate(T, N, A, shape.obs_dim, shape.critic_in_dim, shape.act_dim)
        obs = env.observations
        rows: List[Dict[str, Any]] = []

        for update in range(n_updates):
            started = time.perf_counter()
            finished_returns, finished_lengths, errors = [], [], []
            for t in range(T):
                policy.obs_rms.update(obs)
                out = policy.act(obs, rng)
                result = env.step(out["action"])
                buffer.obs[t] = out["obs"]
                buffer.critic_obs[t] = out["critic_obs"]
                buffer.actions[t] = out["u"]
                buffer.log_probs[t] = out["log_prob"]
                buffer.values[t] = out["value"]
                buffer.rewards[t] = result.rewards
                buffer.dones[t] = result.terminated | result.truncated
                errors.append(result.info["pos_error"].mean())
                done = ~np.isnan(result.info["episode_return"])
                finished_returns.extend(result.info["episode_return"][done])
                finished_lengths.extend(result.info["episode_length"][done])
                obs = result.observations

            bootstrap = policy.act(obs)["value"]
            buffer.compute_advantages(bootstrap, cfg)
            try:
                new_params, stats = ppo_update(policy.params, buffer, cfg, optimizer, rng)
            except NonFiniteLossError:
                if exporter is not None:
                    save_checkpoint(exporter.path(RunExporter.CHECKPOINT), policy.params,
                                    policy.obs_rms, global_step)
                logger.error("non-finite loss at update=%d step=%d; last good params saved",
                             update, global_step)
                raise
            policy.params = new_params
            global_step += steps_per_update
            elapsed = time.perf_counter() - started

            row = {
                "step": global_step,
                "mean_return": float(np.mean(finished_returns)) if finished_returns else float("nan"),
                "mean_length": float(np.mean(finished_lengths)) if finished_lengths else float("nan"),
                "pos_error": float(np.mean(errors)),
                "episodes": len(finished_returns),
                "fps": steps_per_update / elapsed if elapsed > 0 else float("nan"),
            }
            row.update({k: stats[k] for k in ("policy_loss", "value_loss", "entropy", "clip_frac", "grad_norm")})
            rows.append(row)
            if exporter is not None:
                exporter.append_curve([row])
            logger.info("update=%d step=%d return=%.3f pos_error=%.3f entropy=%.3f fps=%.0f",
                        update, global_step, row["mean_return"], row["pos_error"],
                        row["entropy"], row["fps"])

        if exporter is not None:
            save_checkpoint(exporter.path(RunExporter.CHECKPOINT), policy.params, policy.obs_rms, global_step)
    finally:
        env.close()
    return TrainResult(policy=policy, curves=pd.DataFrame(rows), step=global_step)


def load_policy(path, config: Dict[str, Any], registry_path=None) -> Policy:
    """Checkpoint at `path`, checked against the dims of the task in `config`."""
    spec = TaskSpec.from_config(config)
    cfg = PpoConfig.from_dict(config.get("ppo"))
    env = make_env(spec, 1, num_workers=1, registry_path=registry_path)
    try:
        shape = make_shape(env, cfg)
    finally:
        env.close()
    params, obs_rms, _ = load_checkpoint(Path(path), expected=shape)
    obs_rms.frozen = True
    return Policy(params, obs_rms)


def evaluate(config: Dict[str, Any], policy: Policy, episodes: int, seed: int = 0,
             num_envs: int = 16, num_workers: Optional[int] = None, registry_path=None) -> pd.DataFrame:
    """
    Run the deterministic policy (tanh of the mean) until `episodes`
    episodes have finished. One row per episode: return, length, mean and
    final position error, collision and success flags.
    """
    policy.obs_rms.frozen = True
    spec = TaskSpec.from_config(config)
    num_envs = max(1, min(num_envs, episodes))
    env = make_env(spec, num_envs, seed=seed, num_workers=num_workers, registry_path=registry_path)
    rows: List[Dict[str, Any]] = []
    error_sum = np.zeros(num_envs)
    collided = np.zeros(num_envs, dtype=bool)
    try:
        obs = env.observations
        while len(rows) < episodes:
            result = env.step(policy.act(obs)["action"])
            error_sum += result.info["pos_error"]
            collided |= result.info["collision"]
            for i in np.flatnonzero(~np.isnan(result.info["episode_return"])):
                length = int(result.info["episode_length"][i])
                rows.append({
                    "episode": len(rows),
                    "return": float(result.info["episode_return"][i]),
                    "length": length,
                    "pos_error": float(error_sum[i] / length),
                    "final_pos_error": float(result.info["pos_error"][i]),
                    "collision": bool(collided[i]),
                    "success": bool(result.info["success"][i]),
                })
                error_sum[i] = 0.0
                collided[i] = False
            obs = result.observations
    finally:
        env.close()
    frame = pd.DataFrame(rows[:episodes])
    logger.info("eval episodes=%d return=%.3f pos_error=%.3f collisions=%d",
                len(frame), frame["return"].mean(), frame["pos_error"].mean(), int(frame["collision"].sum()))
    return frame


def summarize(episodes: pd.DataFrame) -> pd.DataFrame:
    """Mean and std of every metric column."""
    metrics = episodes.drop(columns=["episode"]).astype(float)
    return pd.DataFrame({"mean": metrics.mean(), "std": metrics.std(ddof=0)})


def rollout(config: Dict[str, Any], policy: Optional[Policy], episodes: int,
            writer: Optional[TrajectoryWriter] = None, seed: int = 0, registry_path=None) -> int:
    """
    Record `episodes` episodes of a single env, one line per step: the state
    the action was applied to, the action and the rewards. Without a policy
    the zero action is used. Returns the number of steps taken.
    """
    if policy is not None:
        policy.obs_rms.frozen = True
    spec = TaskSpec.from_config(config)
    env = make_env(spec, 1, seed=seed, num_workers=1, registry_path=registry_path)
    total = 0
    try:
        obs = env.observations
        for episode in range(episodes):
            step = 0
            done = False
            while not done:
                if policy is None:
                    action = np.zeros((1, env.num_agents, env.action_dim))
                else:
                    action = policy.act(obs)["action"]
                drones = env.snapshot(0)
                result = env.step(action)
                if writer is not None:
                    writer.write_step({
                        "episode": episode,
                        "step": step,
                        "t": step * env.dt,
                        "drones": drones,
                        "action": action[0],
                        "reward": result.rewards[0],
                    })
                step += 1
                obs = result.observations
                done = bool(result.terminated[0] or result.truncated[0])
            total += step
            logger.debug("rollout episode=%d length=%d return=%.3f", episode, step,
                         result.info["episode_return"][0])
    finally:
        env.close()
    return total
