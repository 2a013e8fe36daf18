"""
Command-line entry point.

    python main.py bench   --task configs/tasks/hover.yaml --envs 1024 4096
    python main.py train   --task configs/tasks/hover.yaml --steps 5000000 --envs 4096 --out runs/hover
    python main.py eval    --task configs/tasks/hover.yaml --ckpt runs/hover/checkpoint.bin
    python main.py rollout --task configs/tasks/hover.yaml --ckpt runs/hover/checkpoint.bin --record
    python main.py compare --task configs/tasks/track.yaml --modes rotor rate velocity --steps 2000000

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""
import argparse
import copy
import logging
import sys
import time
import tracemalloc
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from config_utils import ConfigError, load_task_config, log_level, output_dir
from envs.tasks import make_env
from export_utils import RunExporter
from learner.checkpoint import CheckpointMismatchError
from learner.mlp import PolicyParams, RunningMeanStd
from learner.ppo import NonFiniteLossError, PpoConfig
from learner.train import Policy, evaluate, load_policy, make_shape, rollout, summarize, train

logger = logging.getLogger("multirotor")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3

BENCH_TRIALS = 5
BENCH_WARMUP = 10
ACTION_BUFFER = 64
BENCH_COLUMNS = ["task", "envs", "workers", "with_policy", "trials", "fps_mean", "fps_std", "ratio"]


# ------------------------------------------------------
# bench
# ------------------------------------------------------
def run_bench(config: Dict[str, Any], env_counts: List[int], duration: float, seed: int = 0,
              trials: int = BENCH_TRIALS, with_policy: bool = False, num_workers: Optional[int] = None,
              check_alloc: bool = False, alloc_steps: int = BENCH_WARMUP) -> pd.DataFrame:
    """
    Env-steps per second of random-policy stepping for each env count:
    `trials` timed windows of `duration` seconds after a short warmup.
    Actions come from a pre-generated buffer so the timed loop only steps.
    With `check_alloc`, each row also records the net heap growth over
    `alloc_steps` untimed steps.
    """
    if duration <= 0:
        return pd.DataFrame(columns=BENCH_COLUMNS)
    rng = np.random.default_rng(seed)
    rows = []
    for count in env_counts:
        env = make_env(config, count, seed=seed, num_workers=num_workers)
        try:
            actions = rng.uniform(-1.0, 1.0, size=(ACTION_BUFFER, count, env.num_agents, env.action_dim))
            policy = None
            if with_policy:
                shape = make_shape(env, PpoConfig.from_dict(config.get("ppo")))
                policy = Policy(PolicyParams.initialize(shape, rng), RunningMeanStd(shape.obs_dim))

            def advance(k: int):
                if policy is None:
                    env.step(actions[k % ACTION_BUFFER])
                else:
                    env.step(policy.act(env.observations)["action"])

            for k in range(BENCH_WARMUP):
                advance(k)
            alloc_growth = None
            if check_alloc:
                alloc_growth = _allocation_growth(advance, alloc_steps)

            fps = []
            for _ in range(trials):
                steps = 0
                started = time.perf_counter()
                while time.perf_counter() - started < duration:
                    advance(steps)
                    steps += 1
                fps.append(steps * count / (time.perf_counter() - started))
            row = {
                "task": env.kind.value, "envs": count, "workers": env.num_workers,
                "with_policy": with_policy, "trials": trials,
                "fps_mean": float(np.mean(fps)), "fps_std": float(np.std(fps)),
            }
            if alloc_growth is not None:
                row["alloc_growth_bytes"] = alloc_growth
            rows.append(row)
            logger.info("bench envs=%d fps=%.0f +- %.0f", count, row["fps_mean"], row["fps_std"])
        finally:
            env.close()

    report = pd.DataFrame(rows)
    base = report.loc[report["envs"].idxmin(), "fps_mean"]
    report["ratio"] = report["fps_mean"] / base
    return report


def _allocation_growth(advance, steps: int) -> int:
    """Net bytes still allocated after `steps` more steps; the hot loop should hold none."""
    tracemalloc.start()
    try:
        advance(0)
        before, _ = tracemalloc.get_traced_memory()
        for k in range(steps):
            advance(k)
        after, _ = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return int(after - before)


# ------------------------------------------------------
# compare
# ------------------------------------------------------
def run_compare(config: Dict[str, Any], modes: List[str], steps: int, seed: int, num_envs: int,
                episodes: int, out_dir: Path, num_workers: Optional[int] = None) -> pd.DataFrame:
    """Train and evaluate the same task once per control mode, same budget and seed."""
    rows = []
    for mode in modes:
        variant = copy.deepcopy(config)
        variant.setdefault("task", {})["control_mode"] = mode
        result = train(variant, steps, seed=seed, out_dir=out_dir / mode, num_envs=num_envs,
                       num_workers=num_workers)
        episodes_df = evaluate(variant, result.policy, episodes, seed=seed + 1, num_workers=num_workers)
        rows.append({
            "control_mode": mode,
            "pos_error": float(episodes_df["pos_error"].mean()),
            "return": float(episodes_df["return"].mean()),
            "steps": result.step,
        })
    return pd.DataFrame(rows).sort_values("pos_error", kind="stable").reset_index(drop=True)


# ------------------------------------------------------
# CLI
# ------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Batched multirotor simulation and PPO training.")
    parser.add_argument("command", choices=["bench", "train", "eval", "rollout", "compare"])
    parser.add_argument("--task", required=True, help="task YAML file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=1_000_000, help="env steps to train for")
    parser.add_argument("--envs", type=int, nargs="+", default=None, help="env count(s)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--ckpt", default=None, help="checkpoint to evaluate, record or resume from")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, e.g. ppo.lr=1e-4 (repeatable)")
    parser.add_argument("--with-policy", action="store_true", help="bench: include policy inference")
    parser.add_argument("--record", action="store_true", help="rollout: write trajectory.jsonl")
    parser.add_argument("--check-alloc", action="store_true", help="bench: measure heap growth per step")
    parser.add_argument("--duration", type=float, default=2.0, help="bench: seconds per trial")
    parser.add_argument("--episodes", type=int, default=100, help="eval/rollout/compare episodes")
    parser.add_argument("--workers", type=int, default=None, help="env worker threads")
    parser.add_argument("--modes", nargs="+", default=["rotor", "rate", "velocity"],
                        help="compare: control modes")
    parser.add_argument("--log-level", default=None)
    return parser


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return output_dir() / f"{Path(args.task).stem}-{args.command}"


def _require_ckpt(args) -> Path:
    if not args.ckpt:
        raise ConfigError(f"{args.command} needs a checkpoint", key="--ckpt")
    path = Path(args.ckpt)
    if not path.exists():
        raise ConfigError(f"file not found: {path}", key="--ckpt")
    return path


def run(args) -> int:
    config = load_task_config(args.task, args.override)
    exporter = RunExporter(_out_dir(args))
    exporter.save_config(config, args.seed, args.cmdline)

    if args.command == "bench":
        report = run_bench(config, args.envs or [1024, 4096], args.duration, seed=args.seed,
                           with_policy=args.with_policy, num_workers=args.workers,
                           check_alloc=args.check_alloc)
        exporter.write_bench(report.to_dict(orient="records"))
        print(report.to_string(index=False) if not report.empty else "no measurements (duration 0)")

    elif args.command == "train":
        resume = Path(args.ckpt) if args.ckpt else None
        if resume is not None and not resume.exists():
            raise ConfigError(f"file not found: {resume}", key="--ckpt")
        result = train(config, args.steps, seed=args.seed, out_dir=exporter.out_dir,
                       num_envs=(args.envs or [64])[0], num_workers=args.workers, resume=resume)
        print(f"trained to step {result.step}; outputs in {exporter.out_dir}")

    elif args.command == "eval":
        policy = load_policy(_require_ckpt(args), config)
        episodes = evaluate(config, policy, args.episodes, seed=args.seed,
                            num_envs=(args.envs or [16])[0], num_workers=args.workers)
        exporter.write_episodes(episodes)
        print(summarize(episodes).to_string(float_format=lambda v: f"{v:.4f}"))

    elif args.command == "rollout":
        policy = load_policy(_require_ckpt(args), config) if args.ckpt else None
        header = {"task": config.get("task", {}), "seed": args.seed, "episodes": args.episodes}
        if args.record:
            with exporter.open_trajectory(header) as writer:
                steps = rollout(config, policy, args.episodes, writer, seed=args.seed)
            print(f"recorded {steps} steps to {writer.path}")
        else:
            steps = rollout(config, policy, args.episodes, seed=args.seed)
            print(f"ran {steps} steps")

    elif args.command == "compare":
        table = run_compare(config, args.modes, args.steps, args.seed, (args.envs or [64])[0],
                            args.episodes, exporter.out_dir, num_workers=args.workers)
        table.to_csv(exporter.path("compare.csv"), index=False)
        print(table.to_string(index=False))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.cmdline = " ".join(argv)
    logging.basicConfig(level=log_level(args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, CheckpointMismatchError) as e:
        logger.error("configuration error: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as e:
        logger.error("training aborted: %s %s", e, e.stats)
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
