import numpy as np
import pytest

from config_utils import ConfigError
from dynamics.coupled_payload import Direction, LinkConfig
from dynamics.randomization import (
    RandomizationSpec,
    WindSpec,
    sample_link,
    sample_startup,
    wind_step,
)


def test_identity_spec_changes_nothing(hummingbird, rng):
    spec = RandomizationSpec()
    assert spec.is_identity
    model = sample_startup(spec, rng, hummingbird)
    for name in ("mass", "inertia", "max_thrust", "motor_tau", "drag_coeff"):
        np.testing.assert_array_equal(getattr(model, name), getattr(hummingbird, name))
    link = LinkConfig(0.6, 0.1)
    out = sample_link(spec, rng, link)
    assert float(out.length) == 0.6 and float(out.payload_mass) == 0.1


def test_missing_or_disabled_section_is_identity(hummingbird):
    assert RandomizationSpec.from_dict(None, hummingbird.mass).is_identity
    assert RandomizationSpec.from_dict({"enabled": False, "mass": [0.5, 2.0]}, hummingbird.mass).is_identity


def test_mass_within_range(hummingbird, rng):
    spec = RandomizationSpec(mass=(0.8, 1.2))
    masses = np.array([float(sample_startup(spec, rng, hummingbird).mass) for _ in range(10000)])
    nominal = float(hummingbird.mass)
    assert masses.min() >= 0.8 * nominal and masses.max() <= 1.2 * nominal
    assert masses.mean() == pytest.approx(nominal, rel=0.01)


def test_fixed_seed_gives_same_model(hummingbird):
    spec = RandomizationSpec.from_dict({"enabled": True}, hummingbird.mass)
    a = sample_startup(spec, np.random.default_rng(7), hummingbird)
    b = sample_startup(spec, np.random.default_rng(7), hummingbird)
    np.testing.assert_array_equal(a.max_thrust, b.max_thrust)
    np.testing.assert_array_equal(a.inertia, b.inertia)
    assert float(a.mass) == float(b.mass)


def test_enabled_defaults(hummingbird):
    spec = RandomizationSpec.from_dict({"enabled": True, "mass": [0.9, 1.1], "wind": {"enabled": True}},
                                       hummingbird.mass)
    assert spec.mass == (0.9, 1.1)
    assert spec.inertia == (0.8, 1.2)
    weight = float(hummingbird.mass) * 9.81
    assert spec.wind.stationary_std == pytest.approx(0.1 * weight)
    assert spec.wind.max_force == pytest.approx(0.3 * weight)


def test_bad_ranges():
    with pytest.raises(ConfigError, match="randomization.mass"):
        RandomizationSpec.from_dict({"enabled": True, "mass": [1.2, 0.8]}, 1.0)
    with pytest.raises(ConfigError, match="randomization"):
        RandomizationSpec.from_dict({"enabled": True, "mass": [0.0, 1.0]}, 1.0)
    with pytest.raises(ConfigError, match="randomization.wind.theta"):
        RandomizationSpec.from_dict({"enabled": True, "wind": {"enabled": True, "theta": 0}}, 1.0)


class TestWind:
    def test_disabled_is_untouched(self, rng):
        wind = np.ones((4, 3))
        assert wind_step(wind, RandomizationSpec(), rng, 0.01) is wind

    def test_zero_sigma_stays_zero(self, rng):
        spec = RandomizationSpec(wind=WindSpec(True, 1.0, 0.0, 1.0))
        wind = np.zeros((8, 3))
        for _ in range(100):
            wind = wind_step(wind, spec, rng, 0.01)
        np.testing.assert_array_equal(wind, 0.0)

    def test_stationary_std(self, rng):
        spec = RandomizationSpec(wind=WindSpec(True, 1.0, 0.5, 1e9))
        wind = np.zeros((1000, 3))
        for _ in range(500):
            wind = wind_step(wind, spec, rng, 0.01)
        samples = []
        for _ in range(1000):
            wind = wind_step(wind, spec, rng, 0.01)
            samples.append(wind)
        assert np.std(samples) == pytest.approx(spec.wind.stationary_std, rel=0.05)

    def test_clamped_to_max_force(self, rng):
        spec = RandomizationSpec(wind=WindSpec(True, 1.0, 50.0, 0.2))
        wind = np.zeros((100, 3))
        for _ in range(50):
            wind = wind_step(wind, spec, rng, 0.01)
            assert np.linalg.norm(wind, axis=-1).max() <= 0.2 + 1e-12

    def test_per_slot_generators(self):
        spec = RandomizationSpec(wind=WindSpec(True, 1.0, 1.0, 10.0))
        rngs = [np.random.default_rng(s) for s in (1, 2)]
        both = wind_step(np.zeros((2, 3)), spec, rngs, 0.01)
        alone = wind_step(np.zeros((1, 3)), spec, [np.random.default_rng(2)], 0.01)
        np.testing.assert_array_equal(both[1], alone[0])


def test_link_sampling_keeps_direction(rng):
    spec = RandomizationSpec(payload_mass=(0.5, 1.5), payload_length=(0.9, 1.1))
    link = sample_link(spec, rng, LinkConfig(0.6, 0.1, Direction.ABOVE))
    assert link.direction is Direction.ABOVE
    assert 0.54 <= float(link.length) <= 0.66
    assert 0.05 <= float(link.payload_mass) <= 0.15
