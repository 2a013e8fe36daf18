"""
Startup and runtime domain randomisation.

Parameters are multiplicative scales drawn uniformly from `[lo, hi]`;
reset-time resampling is how runtime randomisation of inertial and rotor
parameters is realised. Wind is an Ornstein-Uhlenbeck force per axis.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from config_utils import ConfigError, as_float, as_range
from dynamics.airframe import DroneModel
from dynamics.coupled_payload import LinkConfig
from dynamics.math_core import norm

logger = logging.getLogger(__name__)

IDENTITY = (1.0, 1.0)
DEFAULT_SPREAD = (0.8, 1.2)
SCALED_FIELDS = ("mass", "inertia", "max_thrust", "motor_tau", "drag_coeff",
                 "payload_mass", "payload_length")

Range = Tuple[float, float]
RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]


@dataclass(frozen=True)
class WindSpec:
    enabled: bool = False
    theta: float = 1.0        # mean reversion, 1/s
    sigma: float = 0.0        # N / sqrt(s)
    max_force: float = 0.0    # N

    @property
    def stationary_std(self) -> float:
        return self.sigma / np.sqrt(2.0 * self.theta)


@dataclass(frozen=True)
class RandomizationSpec:
    mass: Range = IDENTITY
    inertia: Range = IDENTITY
    max_thrust: Range = IDENTITY
    motor_tau: Range = IDENTITY
    drag_coeff: Range = IDENTITY
    payload_mass: Range = IDENTITY
    payload_length: Range = IDENTITY
    wind: WindSpec = WindSpec()

    def __post_init__(self):
        for name in SCALED_FIELDS:
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name}: scale range must satisfy 0 < lo <= hi, got [{lo}, {hi}]")
        if self.wind.enabled and not (self.wind.theta > 0 and self.wind.sigma >= 0
                                      and self.wind.max_force >= 0):
            raise ValueError("wind needs theta > 0, sigma >= 0 and max_force >= 0")

    @property
    def is_identity(self) -> bool:
        return all(getattr(self, n) == IDENTITY for n in SCALED_FIELDS) and not self.wind.enabled

    @classmethod
    def from_dict(cls, data: Optional[Dict], drone_mass: float, gravity: float = 9.81) -> "RandomizationSpec":
        """
        Read the `randomization` task section. A missing section, or
        `enabled: false`, gives the identity spec. When enabled, unlisted
        parameters default to a +-20% spread and wind, if on, defaults to a
        stationary per-axis std of 0.1 m g.
        """
        data = data or {}
        if not data.get("enabled", False):
            return cls()
        ranges = {}
        for name in SCALED_FIELDS:
            value = data.get(name)
            ranges[name] = DEFAULT_SPREAD if value is None else as_range(value, f"randomization.{name}")
        wind_data = data.get("wind") or {}
        wind = WindSpec()
        if wind_data.get("enabled", False):
            theta = as_float(wind_data.get("theta", 1.0), "randomization.wind.theta", positive=True)
            weight = drone_mass * gravity
            sigma = wind_data.get("sigma")
            sigma = (0.1 * weight * np.sqrt(2.0 * theta) if sigma is None
                     else as_float(sigma, "randomization.wind.sigma", non_negative=True))
            max_force = as_float(wind_data.get("max_force", 0.3 * weight),
                                 "randomization.wind.max_force", non_negative=True)
            wind = WindSpec(True, theta, float(sigma), max_force)
        try:
            return cls(wind=wind, **ranges)
        except ValueError as e:
            raise ConfigError(str(e), key="randomization")


def _scale(rng: np.random.Generator, bounds: Range, shape=()) -> np.ndarray:
    return rng.uniform(bounds[0], bounds[1], size=shape)


def sample_startup(spec: RandomizationSpec, rng: np.random.Generator, base: DroneModel) -> DroneModel:
    """
    Perturbed copy of an unbatched `base`. Draw order is fixed (mass,
    inertia per axis, max_thrust and motor_tau per rotor, drag) so a seed
    always maps to the same model.
    """
    n = base.num_rotors
    return replace(
        base,
        mass=base.mass * _scale(rng, spec.mass),
        inertia=base.inertia * _scale(rng, spec.inertia, (3,)),
        max_thrust=base.max_thrust * _scale(rng, spec.max_thrust, (n,)),
        motor_tau=base.motor_tau * _scale(rng, spec.motor_tau, (n,)),
        drag_coeff=base.drag_coeff * _scale(rng, spec.drag_coeff),
    )


def sample_link(spec: RandomizationSpec, rng: np.random.Generator, base: LinkConfig) -> LinkConfig:
    return LinkConfig(
        length=base.length * _scale(rng, spec.payload_length),
        payload_mass=base.payload_mass * _scale(rng, spec.payload_mass),
        direction=base.direction,
    )


def _standard_normal(rng: RngLike, shape) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    # one generator per leading row keeps every slot on its own stream
    return np.stack([g.standard_normal(shape[1:]) for g in rng])


def wind_step(wind: np.ndarray, spec: RandomizationSpec, rng: RngLike, dt: float) -> np.ndarray:
    """
    w <- w - theta w dt + sigma sqrt(dt) xi, then clamped to `max_force` in
    magnitude. `rng` is one Generator or one per leading row of `wind`.
    """
    ws = spec.wind
    if not ws.enabled:
        return wind
    noise = _standard_normal(rng, wind.shape)
    wind = wind - ws.theta * wind * dt + ws.sigma * np.sqrt(dt) * noise
    magnitude = norm(wind)
    over = magnitude > ws.max_force
    if np.any(over):
        scale = np.where(over, ws.max_force / np.where(over, magnitude, 1.0), 1.0)
        wind = wind * scale[..., None]
    return wind
