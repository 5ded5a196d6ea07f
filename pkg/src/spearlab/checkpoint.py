"""Binary policy checkpoints.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"SPRLPOL\\x00"
    8       4     uint32 header length H
    12      H     UTF-8 JSON header, keys sorted:
                  format_version, env_name, state_count, action_count,
                  version (policy update counter), config_hash
    12+H    8*S*A float64 logits, row-major (state, action)

``format_version`` is bumped on any change to this layout.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .policy import PolicyParams

__all__ = ["FORMAT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"SPRLPOL\x00"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: PolicyParams
    env_name: str
    config_hash: str = ""
    format_version: int = FORMAT_VERSION

    @property
    def state_count(self) -> int:
        return self.params.shape[0]

    @property
    def action_count(self) -> int:
        return self.params.shape[1]


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "env_name": ckpt.env_name,
        "state_count": ckpt.state_count,
        "action_count": ckpt.action_count,
        "version": ckpt.params.version,
        "config_hash": ckpt.config_hash,
    }, sort_keys=True).encode()
    body = np.ascontiguousarray(ckpt.params.logits, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + body


def from_bytes(data: bytes) -> Checkpoint:
    if data[:8] != MAGIC:
        raise ContractViolation("not a policy checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen])
    if header["format_version"] != FORMAT_VERSION:
        raise ContractViolation(f"unsupported checkpoint format {header['format_version']}")
    S, A = header["state_count"], header["action_count"]
    body = data[12 + hlen:]
    if len(body) != 8 * S * A:
        raise ContractViolation(f"checkpoint body has {len(body)} bytes, expected {8 * S * A}")
    logits = np.frombuffer(body, dtype="<f8").reshape(S, A).astype(np.float64)
    return Checkpoint(PolicyParams(logits, header["version"]), header["env_name"],
                      header["config_hash"], header["format_version"])


def save_checkpoint(path, ckpt: Checkpoint):
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
