"""
Versioned checkpoint container.

Layout:
    magic line  b"AMPZOO-CKPT\\n"
    uint64 LE   header length in bytes
    header      UTF-8 JSON: version, kind, config, extra, tensor table
    blobs       raw little-endian float32 data, in tensor-table order

Tensors are stored in name order so identical models produce identical files.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"AMPZOO-CKPT\n"
FORMAT_VERSION = 1
_BLOB_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Decoded checkpoint contents."""
    kind: str
    config: Dict[str, Any]
    tensors: Dict[str, np.ndarray]
    extra: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    """Serialize a checkpoint to bytes."""
    table = []
    blobs = []
    offset = 0
    for name in sorted(checkpoint.tensors):
        array = np.asarray(checkpoint.tensors[name])
        if not np.all(np.isfinite(array)):
            raise CheckpointError(f"Tensor {name} contains non-finite values")
        blob = np.ascontiguousarray(array, dtype=_BLOB_DTYPE).tobytes()
        table.append({"name": name, "shape": list(array.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    header = {
        "version": FORMAT_VERSION,
        "kind": checkpoint.kind,
        "config": checkpoint.config,
        "extra": checkpoint.extra,
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(blobs)


def decode_checkpoint(raw: bytes) -> Checkpoint:
    """Parse checkpoint bytes produced by encode_checkpoint."""
    if not raw.startswith(MAGIC):
        raise CheckpointError("Not a checkpoint container (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError("Truncated checkpoint header")
    (header_len,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header: {e}") from e
    pos += header_len

    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {header.get('version')}")

    tensors = {}
    for entry in header["tensors"]:
        start = pos + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise CheckpointError(f"Truncated blob for tensor {entry['name']}")
        array = np.frombuffer(raw[start:end], dtype=_BLOB_DTYPE).astype(np.float32)
        tensors[entry["name"]] = array.reshape(entry["shape"])

    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        tensors=tensors,
        extra=header.get("extra", {}),
    )


def save_checkpoint(path: str, checkpoint: Checkpoint) -> Path:
    """Write a checkpoint file, creating parent directories."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_checkpoint(checkpoint))
    logger.info(f"Saved {checkpoint.kind} checkpoint with {len(checkpoint.tensors)} tensors to {target}")
    return target


def load_checkpoint(path: str, expected_kind: Optional[str] = None) -> Checkpoint:
    """Read a checkpoint file, optionally checking its kind."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    checkpoint = decode_checkpoint(raw)
    if expected_kind is not None and checkpoint.kind != expected_kind:
        raise CheckpointError(f"Expected a {expected_kind} checkpoint, found {checkpoint.kind}")
    return checkpoint
