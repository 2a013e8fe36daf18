import pytest

from config_utils import (
    ConfigError,
    apply_overrides,
    as_range,
    load_task_config,
    num_workers,
    output_dir,
    parse_override,
)
from tests.conftest import TASK_DIR


def test_parse_override_types():
    assert parse_override("ppo.lr=1e-3") == (["ppo", "lr"], 1e-3)
    assert parse_override("task.target=[0, 0, 2]") == (["task", "target"], [0, 0, 2])
    assert parse_override("model_overrides.ideal_motors=true") == (["model_overrides", "ideal_motors"], True)
    assert parse_override("task.model=omav") == (["task", "model"], "omav")
    _, lr = parse_override("ppo.lr=3e-4")
    assert isinstance(lr, float) and lr == 3e-4
    assert parse_override("randomization.mass=[8e-1, 1.2]") == (["randomization", "mass"], [0.8, 1.2])
    with pytest.raises(ConfigError):
        parse_override("ppo.lr")
    with pytest.raises(ConfigError):
        parse_override("=3")


def test_overrides_create_sections():
    config = {"task": {"kind": "hover"}}
    out = apply_overrides(config, ["randomization.wind.theta=2", "task.episode_len=10"])
    assert out["randomization"] == {"wind": {"theta": 2}}
    assert out["task"]["episode_len"] == 10
    assert "randomization" not in config
    with pytest.raises(ConfigError, match="task.kind"):
        apply_overrides(config, ["task.kind.sub=1"])


def test_load_task_config(tmp_path):
    config = load_task_config(TASK_DIR / "hover.yaml", ["ppo.lr=1e-4"])
    assert config["task"]["kind"] == "hover"
    assert config["ppo"]["lr"] == 1e-4

    no_task = tmp_path / "bad.yaml"
    no_task.write_text("sim:\n  substeps: 2\n")
    with pytest.raises(ConfigError, match="task"):
        load_task_config(no_task)
    with pytest.raises(ConfigError, match="file not found"):
        load_task_config(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("task: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_task_config(broken)


def test_num_workers_from_environment(monkeypatch):
    monkeypatch.setenv("MULTIROTOR_NUM_WORKERS", "3")
    assert num_workers() == 3
    assert num_workers(2) == 2
    monkeypatch.setenv("MULTIROTOR_NUM_WORKERS", "many")
    with pytest.raises(ConfigError, match="MULTIROTOR_NUM_WORKERS"):
        num_workers()
    monkeypatch.setenv("MULTIROTOR_NUM_WORKERS", "0")
    with pytest.raises(ConfigError):
        num_workers()


def test_output_dir(monkeypatch, tmp_path):
    monkeypatch.setenv("MULTIROTOR_OUTPUT_DIR", str(tmp_path))
    assert output_dir() == tmp_path
    assert str(output_dir("elsewhere")) == "elsewhere"


def test_as_range():
    assert as_range([0.8, 1.2], "randomization.mass") == (0.8, 1.2)
    with pytest.raises(ConfigError, match="not ordered"):
        as_range([1.2, 0.8], "randomization.mass")
    with pytest.raises(ConfigError):
        as_range([1.0], "randomization.mass")
