"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"BRNK" | u32 version | u32 header_len | header (UTF-8 JSON)
            | payload (float32 LE, parameters in declared order) | u32 CRC32(payload)
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .models import Model, build_model

MAGIC = b"BRNK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointCorruptionError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def encode_checkpoint(model: Model, config: dict | None = None, config_hash: str | None = None,
                      version_tag: str | None = None) -> bytes:
    params = model.parameters()
    header = {
        "model_kind": model.kind,
        "hyper": model.hyper,
        "params": [{"name": p.name, "shape": list(p.value.shape)} for p in params],
        "config_hash": config_hash,
        "config": config,
        "snapshot": version_tag,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(p.value, dtype="<f4").tobytes() for p in params)
    return (_PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + payload
            + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def decode_checkpoint(blob: bytes) -> tuple[Model, dict]:
    if len(blob) < _PREFIX.size:
        raise CheckpointFormatError("file too short for a checkpoint prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise CheckpointFormatError("truncated header")
    try:
        header = json.loads(blob[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}") from None
    sizes = [int(np.prod(p["shape"], dtype=np.int64)) for p in header["params"]]
    n_bytes = 4 * sum(sizes)
    body = start + hlen
    if len(blob) != body + n_bytes + 4:
        raise CheckpointFormatError(f"payload length {len(blob) - body - 4} does not match header ({n_bytes})")
    payload = blob[body:body + n_bytes]
    (crc,) = struct.unpack_from("<I", blob, body + n_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointCorruptionError("payload CRC32 mismatch")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    model = build_model(header["model_kind"], header["hyper"])
    values, offset = [], 0
    for entry, size in zip(header["params"], sizes):
        values.append(flat[offset:offset + size].reshape(entry["shape"]))
        offset += size
    names = [p.name for p in model.parameters()]
    if names != [p["name"] for p in header["params"]]:
        raise CheckpointFormatError("parameter layout does not match the model architecture")
    model.load_state(values)
    return model, header


def save_checkpoint(model: Model, path, config: dict | None = None, config_hash: str | None = None,
                    version_tag: str | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model, config, config_hash, version_tag))


def load_checkpoint(path) -> tuple[Model, dict]:
    return decode_checkpoint(Path(path).read_bytes())
