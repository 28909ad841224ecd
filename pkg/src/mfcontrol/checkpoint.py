"""Binary checkpoints: magic bytes, a JSON header and little-endian float64 parameters."""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

from .errors import CheckpointEnvMismatchError, CheckpointError
from .nn import HeadConfig, MlpSpec, PolicyParams

logger = logging.getLogger(__name__)

MAGIC = b"M3FCKPT\x01"
_LEN = struct.Struct("<I")


class CheckpointHeader(BaseModel):
    """Self-describing part of a checkpoint file."""

    env_id: str
    policy_spec: MlpSpec
    value_spec: MlpSpec
    head: HeadConfig
    steps: int = 0
    n_params: int


def save_checkpoint(path: Path, params: PolicyParams, env_id: str) -> Path:
    """Write ``params`` atomically (temporary file, then rename)."""
    header = CheckpointHeader(
        env_id=env_id,
        policy_spec=params.policy_spec,
        value_spec=params.value_spec,
        head=params.head,
        steps=params.steps,
        n_params=int(params.values.size),
    )
    blob = header.model_dump_json().encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        fh.write(np.asarray(params.values, dtype="<f8").tobytes())
    tmp.replace(path)
    logger.debug("Wrote checkpoint %s (%d parameters, step %d)", path, header.n_params, header.steps)
    return path


def load_checkpoint(path: Path, *, env_id: str | None = None) -> tuple[PolicyParams, CheckpointHeader]:
    """Read a checkpoint.

    Args:
        path: Checkpoint file
        env_id: When given, the environment the checkpoint must have been trained on

    Returns:
        Tuple of parameters and header

    Raises:
        CheckpointError: If the file is missing, truncated or not a checkpoint
        CheckpointEnvMismatchError: If ``env_id`` differs from the stored environment
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint '{path}' not found")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"'{path}' is not a checkpoint (bad magic bytes)")
    offset = len(MAGIC)
    if len(data) < offset + _LEN.size:
        raise CheckpointError(f"Checkpoint '{path}' is truncated")
    (header_len,) = _LEN.unpack_from(data, offset)
    offset += _LEN.size
    try:
        header = CheckpointHeader.model_validate(json.loads(data[offset : offset + header_len]))
    except (ValueError, ValidationError) as exc:
        raise CheckpointError(f"Checkpoint '{path}' has an unreadable header: {exc}") from exc
    offset += header_len

    payload = data[offset:]
    if len(payload) != 8 * header.n_params:
        raise CheckpointError(
            f"Checkpoint '{path}' holds {len(payload)} parameter bytes, header announces {header.n_params}"
        )
    if env_id is not None and header.env_id != env_id:
        raise CheckpointEnvMismatchError(
            f"Checkpoint '{path}' was trained on '{header.env_id}', not '{env_id}'"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(float)
    params = PolicyParams(header.policy_spec, header.value_spec, header.head, values, steps=header.steps)
    return params, header
