import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from config_utils import dump_yaml

logger = logging.getLogger(__name__)

CURVE_COLUMNS = [
    "step", "mean_return", "mean_length", "pos_error", "episodes",
    "policy_loss", "value_loss", "entropy", "clip_frac", "grad_norm", "fps",
]


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class RunExporter:
    """
    Writes everything a command leaves in its output directory:

        config.yaml        resolved task config + seed + command
        curves.csv         one row per PPO update, appended on resume
        episodes.txt       evaluation episodes as a fixed-width table
        trajectory.jsonl   header line, then one JSON object per recorded step
        bench.jsonl        one JSON object per benchmarked env count
    """

    CONFIG = "config.yaml"
    CURVES = "curves.csv"
    EPISODES = "episodes.txt"
    TRAJECTORY = "trajectory.jsonl"
    BENCH = "bench.jsonl"
    CHECKPOINT = "checkpoint.bin"

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    # ------------------------------------------------------
    # Config
    # ------------------------------------------------------
    def save_config(self, config: Dict[str, Any], seed: int, command: str) -> Path:
        data = dict(_plain(config))
        data["run"] = {"command": command, "seed": int(seed)}
        dump_yaml(data, self.path(self.CONFIG))
        return self.path(self.CONFIG)

    # ------------------------------------------------------
    # Learning curves
    # ------------------------------------------------------
    def append_curve(self, rows: Iterable[Dict[str, Any]]) -> None:
        frame = pd.DataFrame(list(rows))
        if frame.empty:
            return
        frame = frame.reindex(columns=CURVE_COLUMNS)
        path = self.path(self.CURVES)
        frame.to_csv(path, mode="a", header=not path.exists(), index=False)

    def read_curves(self) -> pd.DataFrame:
        path = self.path(self.CURVES)
        if not path.exists():
            return pd.DataFrame(columns=CURVE_COLUMNS)
        return pd.read_csv(path)

    def last_step(self) -> int:
        curves = self.read_curves()
        return 0 if curves.empty else int(curves["step"].iloc[-1])

    # ------------------------------------------------------
    # Evaluation episodes
    # ------------------------------------------------------
    def write_episodes(self, episodes: pd.DataFrame) -> Path:
        path = self.path(self.EPISODES)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(episodes.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
            fh.write("\n")
        return path

    # ------------------------------------------------------
    # Trajectories
    # ------------------------------------------------------
    def open_trajectory(self, header: Dict[str, Any]) -> "TrajectoryWriter":
        return TrajectoryWriter(self.path(self.TRAJECTORY), header)

    # ------------------------------------------------------
    # Bench
    # ------------------------------------------------------
    def write_bench(self, rows: List[Dict[str, Any]]) -> Path:
        path = self.path(self.BENCH)
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(_plain(row)) + "\n")
        return path


class TrajectoryWriter:
    """Line-delimited trajectory file: one header object, then one object per step."""

    def __init__(self, path: Path, header: Dict[str, Any]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._fh.write(json.dumps({"header": _plain(header)}) + "\n")
        self.lines = 0

    def write_step(self, record: Dict[str, Any]) -> None:
        self._fh.write(json.dumps(_plain(record)) + "\n")
        self.lines += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ------------------------------------------------------
# Loaders for finished run directories
# ------------------------------------------------------
def read_jsonl(path) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_trajectory(path) -> Optional[pd.DataFrame]:
    """Flatten drone 0 of a trajectory file into columns (t, x, y, z, reward, ...)."""
    records = [r for r in read_jsonl(path) if "header" not in r]
    if not records:
        return None
    rows = []
    for r in records:
        drone = r["drones"][0]
        rows.append({
            "episode": r["episode"], "step": r["step"], "t": r["t"],
            "x": drone["pos"][0], "y": drone["pos"][1], "z": drone["pos"][2],
            "reward": r["reward"][0],
        })
    return pd.DataFrame(rows)


def load_run(run_dir) -> Dict[str, Any]:
    if not Path(run_dir).is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    exporter = RunExporter(run_dir)
    episodes_path = exporter.path(RunExporter.EPISODES)
    config_path = exporter.path(RunExporter.CONFIG)
    return {
        "curves": exporter.read_curves(),
        "bench": pd.DataFrame(read_jsonl(exporter.path(RunExporter.BENCH))),
        "episodes": episodes_path.read_text(encoding="utf-8") if episodes_path.exists() else "",
        "trajectory": load_trajectory(exporter.path(RunExporter.TRAJECTORY)),
        "config": config_path.read_text(encoding="utf-8") if config_path.exists() else "",
    }
