"""Parameter checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a UTF-8 JSON
header, then every tensor's values as raw little-endian float64 in header
order.  The header lists ``(name, shape)`` for each tensor and carries any
caller metadata (model config, scaler, channel layout).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import ModelParams

MAGIC = b"FGTNCKP1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, meta: dict) -> None:
    tensors = [{"name": name, "shape": list(t.shape)} for name, t in params.items()]
    header = json.dumps({"meta": meta, "tensors": tensors}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (size,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + size].decode("utf-8"))
    offset = 16 + size
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        state[entry["name"]] = values.reshape(entry["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], state
