"""Binary checkpoint archive.

Layout (little-endian)::

    magic        8 bytes  b"CPDNETCK"
    version      u32      1
    header_len   u32
    header       JSON (config C, seed, free-form extras)
    header_crc   u32
    n_entries    u32
    entry*       name_len u16, name utf-8, ndim u8, dims u32*ndim,
                 values f32*prod(dims), crc32 u32 over the preceding entry bytes

Every entry carries its own checksum so a damaged archive reports the
first failing entry by name.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CPDNETCK"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or corrupt checkpoint."""


@dataclass
class Checkpoint:
    base_channels: int
    seed: int
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, base_channels: int, seed: int, tensors: dict[str, np.ndarray], extra: dict | None = None) -> None:
    header = json.dumps(
        {"C": int(base_channels), "seed": int(seed), "extra": extra or {}}, sort_keys=True
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", zlib.crc32(header))]
    parts.append(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        raw_name = name.encode("utf-8")
        entry = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", arr.ndim)
        entry += struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()
        parts.append(entry + struct.pack("<I", zlib.crc32(entry)))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    r = _Reader(buf, path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path}: not a CPD-Net checkpoint")
    version, header_len = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header_raw = r.take(header_len, "header")
    (crc,) = r.unpack("<I", "header checksum")
    if zlib.crc32(header_raw) != crc:
        raise CheckpointError(f"{path}: header checksum mismatch")
    header = json.loads(header_raw)
    (n_entries,) = r.unpack("<I", "entry count")
    tensors: dict[str, np.ndarray] = {}
    for k in range(n_entries):
        start = r.pos
        label = f"entry {k}"
        (name_len,) = r.unpack("<H", label)
        raw_name = r.take(name_len, label)
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: entry {k} has an undecodable name") from None
        label = f"entry {name!r}"
        (ndim,) = r.unpack("<B", label)
        dims = r.unpack(f"<{ndim}I", label)
        count = int(np.prod(dims)) if ndim else 1
        data = r.take(4 * count, label)
        (crc,) = r.unpack("<I", label)
        if zlib.crc32(buf[start:r.pos - 4]) != crc:
            raise CheckpointError(f"{path}: checksum mismatch in {label}")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes after the last entry")
    return Checkpoint(int(header["C"]), int(header["seed"]), tensors, header.get("extra", {}))


def save_model(path, model, extra: dict | None = None, optimizer_state: dict[str, np.ndarray] | None = None) -> None:
    tensors = dict(model.state_dict())
    for name, value in (optimizer_state or {}).items():
        tensors[f"optim.{name}"] = value
    extra = dict(extra or {})
    extra.setdefault("blocks_per_stage", model.config.blocks_per_stage)
    save_checkpoint(path, model.config.base_channels, model.seed, tensors, extra)


def load_model(path):
    """Rebuild a model from a checkpoint; returns ``(model, checkpoint)``."""
    from .model import BackboneConfig, build_model

    ckpt = load_checkpoint(path)
    try:
        config = BackboneConfig(ckpt.base_channels, int(ckpt.extra.get("blocks_per_stage", 4)))
        model = build_model(config, ckpt.seed)
        model.load_state_dict({k: v for k, v in ckpt.tensors.items() if not k.startswith("optim.")})
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model, ckpt
