"""
PPO with GAE, clipped surrogate, Adam and global gradient-norm clipping.
"""
import logging
from dataclasses import dataclass, fields
from typing import Any, Dict, Optional

import numpy as np

from config_utils import ConfigError, as_float
from learner.mlp import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    PolicyParams,
    gaussian_entropy,
    mlp_backward,
    mlp_forward,
    squashed_log_prob,
)

logger = logging.getLogger(__name__)

# fixed projection used to put samples in a content-defined order
_ORDER_SEED = 20240611


class NonFiniteLossError(RuntimeError):
    """A PPO update produced a non-finite loss or gradient; parameters were left untouched."""

    def __init__(self, message: str, stats: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.stats = stats or {}


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 8
    lr: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 1e-3
    rollout_len: int = 32
    max_grad_norm: float = 1.0
    hidden: int = 256
    n_hidden: int = 3
    init_log_std: float = 0.0
    centralized_critic: bool = False

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.clip < 0:
            raise ValueError("clip must be >= 0")
        if self.epochs < 1 or self.minibatches < 1 or self.rollout_len < 1:
            raise ValueError("epochs, minibatches and rollout_len must be >= 1")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "PpoConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", key="ppo")
        values = {}
        for key, value in data.items():
            default = getattr(cls, key)
            if isinstance(default, bool):
                values[key] = bool(value)
            elif isinstance(default, int):
                values[key] = int(as_float(value, f"ppo.{key}"))
            else:
                values[key] = as_float(value, f"ppo.{key}")
        try:
            return cls(**values)
        except ValueError as e:
            raise ConfigError(str(e), key="ppo")


def gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """
    Generalised advantage estimation over a (T, ...) rollout.

        delta_t = r_t + gamma v_{t+1} (1 - done_t) - v_t
        A_t     = delta_t + gamma lam (1 - done_t) A_{t+1}

    `dones` broadcasts against `rewards` (per-env flags serve every agent).
    Returns (advantages, returns = advantages + values).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.broadcast_to(np.asarray(dones, dtype=np.float64), rewards.shape)
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    running = np.zeros_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        running = delta + gamma * lam * not_done[t] * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


@dataclass
class RolloutBuffer:
    """One rollout of T steps over N envs and A agents."""
    obs: np.ndarray            # (T, N, A, obs_dim), already normalised
    critic_obs: np.ndarray     # (T, N, A, critic_in_dim)
    actions: np.ndarray        # (T, N, A, act_dim), pre-tanh samples
    log_probs: np.ndarray      # (T, N, A)
    rewards: np.ndarray        # (T, N, A)
    values: np.ndarray         # (T, N, A)
    dones: np.ndarray          # (T, N)
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @classmethod
    def allocate(cls, T, N, A, obs_dim, critic_dim, act_dim) -> "RolloutBuffer":
        return cls(
            obs=np.zeros((T, N, A, obs_dim)),
            critic_obs=np.zeros((T, N, A, critic_dim)),
            actions=np.zeros((T, N, A, act_dim)),
            log_probs=np.zeros((T, N, A)),
            rewards=np.zeros((T, N, A)),
            values=np.zeros((T, N, A)),
            dones=np.zeros((T, N), dtype=bool),
        )

    def compute_advantages(self, bootstrap_value, cfg: PpoConfig) -> None:
        self.advantages, self.returns = gae(self.rewards, self.values, self.dones[..., None],
                                            bootstrap_value, cfg.gamma, cfg.gae_lambda)

    def flatten(self) -> Dict[str, np.ndarray]:
        if self.advantages is None:
            raise RuntimeError("compute_advantages must run before the buffer is consumed")
        count = self.log_probs.size
        return {
            "obs": self.obs.reshape(count, -1),
            "critic_obs": self.critic_obs.reshape(count, -1),
            "actions": self.actions.reshape(count, -1),
            "log_probs": self.log_probs.reshape(count),
            "advantages": self.advantages.reshape(count),
            "returns": self.returns.reshape(count),
        }


def canonical_order(batch: Dict[str, np.ndarray]) -> np.ndarray:
    """
    Sample order defined by content only: a fixed random projection of
    (obs, action). Relabelling agents or envs permutes rows but leaves this
    order, and hence every minibatch, unchanged.
    """
    rng = np.random.default_rng(_ORDER_SEED)
    features = np.concatenate([batch["obs"], batch["actions"]], axis=1)
    key = (features * rng.standard_normal(features.shape[1])).sum(axis=1)
    return np.argsort(key, kind="stable")


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / max(adv.std(), 1e-8)


def loss_and_grad(params: PolicyParams, mb: Dict[str, np.ndarray], cfg: PpoConfig):
    """
    Total loss = policy + value_coef * value - entropy_coef * entropy on one
    minibatch, and its gradient as a flat vector aligned with params.vector.
    Advantages are normalised inside.
    """
    B = mb["obs"].shape[0]
    adv = normalize_advantages(mb["advantages"])
    grad = np.zeros_like(params.vector)
    grads = PolicyParams(params.shape, grad)

    mean, actor_acts = mlp_forward(params.actor, mb["obs"])
    value, critic_acts = mlp_forward(params.critic, mb["critic_obs"])
    value = value[:, 0]
    log_std = params.clamped_log_std()
    std_mask = ((params.log_std >= LOG_STD_MIN) & (params.log_std <= LOG_STD_MAX)).astype(np.float64)

    u = mb["actions"]
    # the tanh correction does not depend on the parameters and drops out of the gradient
    new_logp = squashed_log_prob(u, mean, log_std)
    ratio = np.exp(new_logp - mb["log_probs"])
    # samples outside [1 - clip, 1 + clip] contribute a constant on either side of the advantage
    inside = np.abs(ratio - 1.0) <= cfg.clip
    policy_loss = -(np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv).mean()
    value_loss = ((value - mb["returns"]) ** 2).mean()
    entropy = gaussian_entropy(log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    d_logp = -inside.astype(np.float64) * adv * ratio / B                                 # (B,)
    inv_var = np.exp(-2.0 * log_std)
    diff = u - mean
    d_mean = d_logp[:, None] * diff * inv_var                          # (B, act)
    d_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)
    d_log_std -= cfg.entropy_coef
    grads.log_std[...] = d_log_std * std_mask
    mlp_backward(params.actor, actor_acts, d_mean, grads.actor)

    d_value = (cfg.value_coef * 2.0 / B) * (value - mb["returns"])
    mlp_backward(params.critic, critic_acts, d_value[:, None], grads.critic)

    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_frac": float((np.abs(ratio - 1.0) > cfg.clip).mean()),
    }
    return float(loss), grad, stats


class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, vector: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return vector - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(grad: np.ndarray, max_norm: float):
    norm = float(np.sqrt((grad * grad).sum()))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


def ppo_update(params: PolicyParams, buffer: RolloutBuffer, cfg: PpoConfig, optimizer: Adam,
               rng: np.random.Generator):
    """
    epochs x minibatches Adam steps on the buffer. Returns (new params,
    mean stats). Raises NonFiniteLossError before applying a bad step.
    """
    batch = buffer.flatten()
    order = canonical_order(batch)
    batch = {k: v[order] for k, v in batch.items()}
    count = batch["log_probs"].shape[0]

    params = params.copy()
    totals: Dict[str, float] = {}
    steps = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(count)
        for idx in np.array_split(perm, cfg.minibatches):
            if len(idx) == 0:
                continue
            mb = {k: v[idx] for k, v in batch.items()}
            loss, grad, stats = loss_and_grad(params, mb, cfg)
            grad, grad_norm = clip_grad_norm(grad, cfg.max_grad_norm)
            stats["grad_norm"] = grad_norm
            if not (np.isfinite(loss) and np.isfinite(grad_norm)):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}", stats)
            params.vector[...] = optimizer.step(params.vector, grad)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            steps += 1
    return params, {k: v / max(steps, 1) for k, v in totals.items()}
