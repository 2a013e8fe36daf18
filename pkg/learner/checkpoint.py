"""
Binary checkpoint: policy parameters plus the observation normaliser.

Layout (little-endian):
    4s   magic b"MRLP"
    u32  version, obs_dim, act_dim, critic_in_dim, hidden, n_hidden
    u64  global env step
    f64  obs mean (obs_dim), obs var (obs_dim), obs count (1)
    f64  parameter vector: actor layers (W row-major, then b), log_std, critic layers
"""
import logging
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from learner.mlp import NetShape, PolicyParams, RunningMeanStd

logger = logging.getLogger(__name__)

MAGIC = b"MRLP"
VERSION = 1
_HEADER = struct.Struct("<4s6IQ")


class CheckpointMismatchError(ValueError):
    """The checkpoint's network shape does not fit the task it is loaded for."""


def save_checkpoint(path, params: PolicyParams, obs_rms: RunningMeanStd, step: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    s = params.shape
    header = _HEADER.pack(MAGIC, VERSION, s.obs_dim, s.act_dim, s.critic_in_dim, s.hidden,
                          s.n_hidden, int(step))
    body = np.concatenate([obs_rms.mean, obs_rms.var, [obs_rms.count], params.vector])
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(body.astype("<f8").tobytes())
    tmp.replace(path)
    logger.info("checkpoint saved path=%s step=%d", path, step)
    return path


def load_checkpoint(path, expected: Optional[NetShape] = None) -> Tuple[PolicyParams, RunningMeanStd, int]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointMismatchError(f"{path}: file too short for a checkpoint header")
    magic, version, obs_dim, act_dim, critic_dim, hidden, n_hidden, step = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointMismatchError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointMismatchError(f"{path}: unsupported version {version}")
    shape = NetShape(obs_dim, act_dim, critic_dim, hidden, n_hidden)
    if expected is not None and shape != expected:
        raise CheckpointMismatchError(
            f"checkpoint network (obs={obs_dim}, act={act_dim}, critic_in={critic_dim}, "
            f"hidden={hidden}x{n_hidden}) does not match the task (obs={expected.obs_dim}, "
            f"act={expected.act_dim}, critic_in={expected.critic_in_dim}, "
            f"hidden={expected.hidden}x{expected.n_hidden})")
    expected_len = 2 * obs_dim + 1 + shape.num_params
    if len(data) - _HEADER.size != 8 * expected_len:
        raise CheckpointMismatchError(f"{path}: payload has {len(data) - _HEADER.size} bytes, "
                                      f"expected {8 * expected_len}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    obs_rms = RunningMeanStd(obs_dim)
    obs_rms.mean = body[:obs_dim].copy()
    obs_rms.var = body[obs_dim:2 * obs_dim].copy()
    obs_rms.count = float(body[2 * obs_dim])
    params = PolicyParams(shape, body[2 * obs_dim + 1:].copy())
    return params, obs_rms, int(step)
