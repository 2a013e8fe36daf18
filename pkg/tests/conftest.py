from dataclasses import replace

import numpy as np
import pytest

from config_utils import DEFAULT_CONFIG_DIR, load_task_config
from dynamics.airframe import get_model

TASK_DIR = DEFAULT_CONFIG_DIR / "tasks"

# start exactly where the task starts, level and at rest
EXACT_INIT = ["init.pos_box=0", "init.max_tilt=0", "init.vel_std=0", "init.link_tilt=0"]


def task_config(name: str, *overrides: str) -> dict:
    return load_task_config(TASK_DIR / f"{name}.yaml", list(overrides))


def tiny_ppo(*extra: str) -> list:
    """Overrides for a network and rollout small enough for unit tests."""
    return ["ppo.hidden=8", "ppo.n_hidden=1", "ppo.rollout_len=4", "ppo.epochs=1",
            "ppo.minibatches=2", *extra]


@pytest.fixture
def hummingbird():
    return get_model("hummingbird")


@pytest.fixture
def ideal_hummingbird(hummingbird):
    return replace(hummingbird, drag_coeff=np.float64(0.0), ideal_motors=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
