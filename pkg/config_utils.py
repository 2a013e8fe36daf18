import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parent
DEFAULT_CONFIG_DIR = REPO_ROOT / "configs"


class ConfigError(Exception):
    """Raised when a task, drone or run configuration is missing or invalid."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


def _get_env(name: str, fallback: Optional[str] = None) -> Optional[str]:
    value = os.getenv(name)
    if value is not None:
        return value
    return fallback


def config_dir() -> Path:
    return Path(_get_env("MULTIROTOR_CONFIG_DIR") or DEFAULT_CONFIG_DIR)


def log_level(explicit: Optional[str] = None) -> str:
    return (explicit or _get_env("MULTIROTOR_LOG_LEVEL", "INFO")).upper()


def num_workers(explicit: Optional[int] = None) -> int:
    if explicit is not None:
        return int(explicit)
    raw = _get_env("MULTIROTOR_NUM_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", key="MULTIROTOR_NUM_WORKERS")
    if workers < 1:
        raise ConfigError("must be >= 1", key="MULTIROTOR_NUM_WORKERS")
    return workers


def output_dir(explicit: Optional[str] = None) -> Path:
    return Path(explicit or _get_env("MULTIROTOR_OUTPUT_DIR", "runs"))


def read_yaml(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}", key="path")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}", key="path")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"top level of {path} must be a mapping", key="path")
    return data


def parse_override(text: str):
    """
    Split a `section.key=value` override. The value is parsed as a YAML
    scalar or flow sequence, so `ppo.lr=1e-3` gives a float and
    `task.target=[0, 0, 2]` a list.
    """
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}", key=text)
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError("override key is empty", key=text)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.split("."), _yaml11_float(value)


def _yaml11_float(value):
    # YAML 1.1 resolvers leave exponents without a dot (1e-3) as strings
    if isinstance(value, list):
        return [_yaml11_float(v) for v in value]
    if not isinstance(value, str):
        return value
    try:
        return float(value)
    except ValueError:
        return value


def apply_overrides(config: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    data = copy.deepcopy(config)
    for text in overrides or []:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            if not isinstance(child, dict):
                raise ConfigError("cannot override inside a non-mapping value", key=".".join(path))
            node = child
        node[path[-1]] = value
        logger.debug("override %s=%r", ".".join(path), value)
    return data


def load_task_config(path, overrides: Optional[List[str]] = None) -> Dict[str, Any]:
    """
    Load a task file and apply command-line overrides.

    Task files hold the sections `task`, `sim`, `init`, `reward`,
    `termination`, `link`, `randomization`, `model_overrides` and `ppo`.
    Only `task` is required; the rest fall back to shipped defaults.
    """
    data = apply_overrides(read_yaml(path), overrides or [])
    if "task" not in data or not isinstance(data["task"], dict):
        raise ConfigError("missing 'task' section", key="task")
    return data


def section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = config.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError("must be a mapping", key=name)
    return value


def require(mapping: Dict[str, Any], key: str, prefix: str = ""):
    if key not in mapping:
        raise ConfigError("required key is missing", key=f"{prefix}{key}")
    return mapping[key]


def as_float(value, key: str, positive: bool = False, non_negative: bool = False) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}", key=key)
    if positive and not out > 0:
        raise ConfigError(f"must be > 0, got {out}", key=key)
    if non_negative and out < 0:
        raise ConfigError(f"must be >= 0, got {out}", key=key)
    return out


def as_vec(value, key: str, size: int = 3) -> List[float]:
    if not isinstance(value, (list, tuple)) or len(value) != size:
        raise ConfigError(f"expected a list of {size} numbers, got {value!r}", key=key)
    return [as_float(v, key) for v in value]


def as_range(value, key: str) -> tuple:
    """A `[lo, hi]` pair with lo <= hi."""
    lo, hi = as_vec(value, key, size=2)
    if lo > hi:
        raise ConfigError(f"range is not ordered: [{lo}, {hi}]", key=key)
    return lo, hi


def dump_yaml(data: Dict[str, Any], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
