"""
Actor-critic MLPs with hand-written backpropagation.

All weights live in one flat float64 vector; layers are views into it, so
the optimiser and the checkpoint only ever see that vector. Layer weights
are stored (in, out) and applied as x @ W + b.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class NetShape:
    obs_dim: int
    act_dim: int
    critic_in_dim: int
    hidden: int = 256
    n_hidden: int = 3

    def layer_sizes(self, in_dim: int, out_dim: int) -> List[Tuple[int, int]]:
        dims = [in_dim] + [self.hidden] * self.n_hidden + [out_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        total = self.act_dim
        for sizes in (self.layer_sizes(self.obs_dim, self.act_dim), self.layer_sizes(self.critic_in_dim, 1)):
            total += sum(i * o + o for i, o in sizes)
        return total


Layer = Tuple[np.ndarray, np.ndarray]


class PolicyParams:
    """
    Flat parameter vector with named views: actor layers, then the
    state-independent log-std, then critic layers.
    """

    def __init__(self, shape: NetShape, vector: Optional[np.ndarray] = None):
        self.shape = shape
        if vector is None:
            vector = np.zeros(shape.num_params)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (shape.num_params,):
            raise ValueError(f"parameter vector has {vector.shape}, expected ({shape.num_params},)")
        self.vector = vector
        self.actor, offset = self._views(vector, 0, shape.layer_sizes(shape.obs_dim, shape.act_dim))
        self.log_std = vector[offset:offset + shape.act_dim]
        offset += shape.act_dim
        self.critic, offset = self._views(vector, offset, shape.layer_sizes(shape.critic_in_dim, 1))

    @staticmethod
    def _views(vector, offset, sizes) -> Tuple[List[Layer], int]:
        layers = []
        for i, o in sizes:
            W = vector[offset:offset + i * o].reshape(i, o)
            offset += i * o
            b = vector[offset:offset + o]
            offset += o
            layers.append((W, b))
        return layers, offset

    @classmethod
    def initialize(cls, shape: NetShape, rng: np.random.Generator, hidden_gain: float = 1.41,
                   head_gain: float = 0.01, value_gain: float = 1.0, init_log_std: float = 0.0) -> "PolicyParams":
        params = cls(shape)
        for layers, last_gain in ((params.actor, head_gain), (params.critic, value_gain)):
            for k, (W, b) in enumerate(layers):
                gain = last_gain if k == len(layers) - 1 else hidden_gain
                W[...] = orthogonal(W.shape, gain, rng)
                b[...] = 0.0
        params.log_std[...] = init_log_std
        return params

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.shape, self.vector.copy())

    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)


def orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def mlp_forward(layers: List[Layer], x: np.ndarray):
    """tanh hidden layers, linear output. Returns (output, activations for backward)."""
    activations = [x]
    h = x
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        activations.append(h)
    W, b = layers[-1]
    return h @ W + b, activations


def mlp_backward(layers: List[Layer], activations, grad_out: np.ndarray, grads: List[Layer]) -> np.ndarray:
    """Accumulate dL/dW, dL/db into `grads` (views of a gradient vector); returns dL/dx."""
    g = grad_out
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        dW, db = grads[k]
        h_in = activations[k]
        dW += h_in.T @ g
        db += g.sum(axis=0)
        g = g @ W.T
        if k > 0:
            g = g * (1.0 - h_in * h_in)
    return g


def policy_forward(params: PolicyParams, obs: np.ndarray, critic_obs: Optional[np.ndarray] = None):
    """
    Batched forward pass over rows of `obs` (B, obs_dim). `critic_obs`
    defaults to `obs`. Returns (mean (B, act), log_std (act,), value (B,)).
    """
    obs = np.asarray(obs, dtype=np.float64)
    critic_obs = obs if critic_obs is None else np.asarray(critic_obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != params.shape.obs_dim:
        raise ValueError(f"obs must be (B, {params.shape.obs_dim}), got {obs.shape}")
    if critic_obs.shape != (obs.shape[0], params.shape.critic_in_dim):
        raise ValueError(f"critic input must be ({obs.shape[0]}, {params.shape.critic_in_dim}), "
                         f"got {critic_obs.shape}")
    mean, _ = mlp_forward(params.actor, obs)
    value, _ = mlp_forward(params.critic, critic_obs)
    return mean, params.clamped_log_std(), value[:, 0]


def gaussian_log_prob(u, mean, log_std) -> np.ndarray:
    z = (u - mean) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * np.log(2.0 * np.pi)).sum(axis=-1)


def tanh_log_det(u) -> np.ndarray:
    """sum log(1 - tanh(u)^2), written as 2 (log 2 - u - softplus(-2u)) to stay finite."""
    return (2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))).sum(axis=-1)


def squashed_log_prob(u, mean, log_std) -> np.ndarray:
    """Log-density of a = tanh(u) with u ~ N(mean, exp(log_std)^2)."""
    return gaussian_log_prob(u, mean, log_std) - tanh_log_det(u)


def gaussian_entropy(log_std) -> float:
    return float((log_std + 0.5 * np.log(2.0 * np.pi * np.e)).sum())


class RunningMeanStd:
    """Per-feature running mean/variance, merged batch by batch."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip
        self.frozen = False

    def update(self, x: np.ndarray) -> None:
        if self.frozen:
            return
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.mean.shape[0])
        batch_mean = x.mean(axis=0)
        batch_var = x.var(axis=0)
        n = x.shape[0]
        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + batch_var * n + delta * delta * self.count * n / total
        self.var = m2 / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -self.clip, self.clip)
