"""Trajectory dumps: magic bytes, a JSON header, then one length-prefixed record per step.

Each record is the little-endian float64 concatenation of
``obs | major | xi_raw | logp | reward | value | done | truncated``.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .errors import CheckpointError
from .finite_sim import TrajectoryBatch
from .policy import ExecutionMode

logger = logging.getLogger(__name__)

MAGIC = b"M3FCTRJ\x01"
_LEN = struct.Struct("<I")


class DumpHeader(BaseModel):
    """Everything needed to re-simulate the dumped batch."""

    env_id: str
    n_agents: int
    seed: int
    mode: ExecutionMode
    episode_offset: int = 0
    steps: int
    deterministic: bool = False
    widths: dict[str, int] = Field(default_factory=dict)


@dataclass(frozen=True)
class TrajectoryDump:
    """A dump read back into arrays."""

    header: DumpHeader
    obs: np.ndarray
    major: np.ndarray
    xi_raw: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray


_FIELDS = ("obs", "major", "xi_raw")


def write_dump(path: Path, header: DumpHeader, batch: TrajectoryBatch) -> Path:
    header = header.model_copy(
        update={"widths": {name: int(getattr(batch, name).shape[1]) for name in _FIELDS}}
    )
    blob = header.model_dump_json().encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for t in range(len(batch)):
            record = np.concatenate(
                [
                    batch.obs[t],
                    batch.major[t],
                    batch.xi_raw[t],
                    [batch.logp[t], batch.rewards[t], batch.values[t], batch.dones[t], batch.truncated[t]],
                ]
            ).astype("<f8")
            payload = record.tobytes()
            fh.write(_LEN.pack(len(payload)))
            fh.write(payload)
    logger.info("Wrote %d trajectory steps to %s", len(batch), path)
    return path


def read_dump(path: Path) -> TrajectoryDump:
    """Read a dump written by :func:`write_dump`.

    Raises:
        CheckpointError: If the file is missing, truncated or not a trajectory dump
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Trajectory dump '{path}' not found")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"'{path}' is not a trajectory dump (bad magic bytes)")
    offset = len(MAGIC)
    (header_len,) = _LEN.unpack_from(data, offset)
    offset += _LEN.size
    try:
        header = DumpHeader.model_validate(json.loads(data[offset : offset + header_len]))
    except (ValueError, ValidationError) as exc:
        raise CheckpointError(f"Trajectory dump '{path}' has an unreadable header: {exc}") from exc
    offset += header_len

    rows = []
    while offset < len(data):
        if offset + _LEN.size > len(data):
            raise CheckpointError(f"Trajectory dump '{path}' is truncated")
        (size,) = _LEN.unpack_from(data, offset)
        offset += _LEN.size
        if offset + size > len(data):
            raise CheckpointError(f"Trajectory dump '{path}' is truncated")
        rows.append(np.frombuffer(data[offset : offset + size], dtype="<f8"))
        offset += size

    widths = [header.widths.get(name, 0) for name in _FIELDS]
    table = np.vstack(rows) if rows else np.zeros((0, sum(widths) + 5))
    if table.shape[1] != sum(widths) + 5:
        raise CheckpointError(f"Trajectory dump '{path}' records do not match the header widths")
    cuts = np.cumsum(widths)
    tail = table[:, cuts[-1] :]
    return TrajectoryDump(
        header=header,
        obs=table[:, : cuts[0]],
        major=table[:, cuts[0] : cuts[1]],
        xi_raw=table[:, cuts[1] : cuts[2]],
        logp=tail[:, 0],
        rewards=tail[:, 1],
        values=tail[:, 2],
        dones=tail[:, 3].astype(bool),
        truncated=tail[:, 4].astype(bool),
    )
