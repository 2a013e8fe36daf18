"""
Long-running end-to-end checks: training quality, multi-agent learning,
throughput and the control-mode ordering. Run with `pytest -m slow`.
"""
import pytest

from learner.train import evaluate, train
from main import run_bench, run_compare
from tests.conftest import task_config

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_hover_learns_to_hold_position(tmp_path, seed):
    cfg = task_config("hover")
    result = train(cfg, 10_000_000, seed=seed, out_dir=tmp_path, num_envs=4096)
    episodes = evaluate(cfg, result.policy, 100, seed=seed + 100)
    assert episodes["pos_error"].mean() < 0.2


@pytest.mark.parametrize("seed", [0, 1])
def test_formation_holds_shape(tmp_path, seed):
    cfg = task_config("formation")
    result = train(cfg, 20_000_000, seed=seed, out_dir=tmp_path, num_envs=4096)
    episodes = evaluate(cfg, result.policy, 100, seed=seed + 100)
    assert episodes["pos_error"].mean() < 0.3
    assert not episodes["collision"].any()


def test_throughput_and_scaling():
    report = run_bench(task_config("hover"), [1024, 4096], duration=2.0, num_workers=8)
    by_envs = report.set_index("envs")
    assert by_envs.loc[4096, "fps_mean"] >= 1e5
    assert by_envs.loc[4096, "fps_mean"] / by_envs.loc[1024, "fps_mean"] >= 2.5


def test_direct_and_rate_control_beat_velocity_on_track(tmp_path):
    table = run_compare(task_config("track"), ["rotor", "rate", "velocity"], 5_000_000, seed=0,
                        num_envs=4096, episodes=100, out_dir=tmp_path)
    errors = table.set_index("control_mode")["pos_error"]
    assert errors["rotor"] < errors["velocity"]
    assert errors["rate"] < errors["velocity"]
