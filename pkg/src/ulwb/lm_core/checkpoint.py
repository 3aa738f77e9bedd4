"""Binary checkpoint format.

Layout (little-endian)::

    b"ULWB" | u32 version | u64 n | n bytes UTF-8 JSON ModelConfig
    u32 tensor_count
    per tensor: u32 name_len | name | u32 rank | rank x u64 dims
    raw float32 data for every tensor, in table order
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, TinyLM

MAGIC = b"ULWB"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptHeaderError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeTableMismatchError(CheckpointError):
    pass


def _encode(model: TinyLM) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(cfg)), cfg]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, t in state.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", t.dim()))
        parts.append(struct.pack(f"<{t.dim()}Q", *t.shape))
    for t in state.values():
        parts.append(t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    return b"".join(parts)


def checkpoint_save(model: TinyLM, path) -> str:
    """Write atomically (temp file + rename). Returns the sha256 of the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = _encode(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(blob).hexdigest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptHeaderError(f"truncated checkpoint: need {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_load(path) -> tuple[TinyLM, ModelConfig]:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptHeaderError("bad magic")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (cfg_len,) = r.unpack("<Q")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise CorruptHeaderError(f"unreadable config document: {exc}") from exc
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8", errors="strict")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        table.append((name, tuple(dims)))

    model = TinyLM(cfg)
    expected = [(k, tuple(v.shape)) for k, v in model.state_dict().items()]
    if table != expected:
        raise ShapeTableMismatchError("tensor table does not match the model built from its config")
    state = {}
    for name, dims in table:
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        state[name] = torch.from_numpy(arr.astype(np.float32))
    if r.pos != len(data):
        raise CorruptHeaderError(f"{len(data) - r.pos} trailing bytes after tensor data")
    model.load_state_dict(state)
    model.eval()
    return model, cfg


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
