"""Versioned binary checkpoint.

Layout (all integers little-endian)::

    b"MGEC"                      magic
    u32 format_version           currently 1
    u32 n, n bytes               UTF-8 JSON config
    u32 count                    number of tensors, then per tensor:
        u32 n, n bytes           UTF-8 name
        u32 rank
        rank × u64               dims
        prod(dims) × f32         row-major data

The JSON config carries ``model`` (ModelConfig fields), ``vocab`` (token list
without reserved ids) and, optionally, ``class_names``, ``class_prompts`` and
any run metadata.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from medgrad.errors import CheckpointFormatError
from medgrad.model import ClipModel, ModelConfig

MAGIC = b"MGEC"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: ClipModel
    meta: dict = field(default_factory=dict)


def encode(model: ClipModel, meta: dict | None = None) -> bytes:
    config = dict(meta or {})
    config["model"] = model.config.to_dict()
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(blob)), blob]
    parts.append(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        data = np.asarray(t.data, dtype="<f4")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", data.ndim)]
        parts += [struct.pack("<Q", d) for d in data.shape]
        parts.append(data.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format_version {version} (this build reads {FORMAT_VERSION})")
    try:
        meta = json.loads(r.take(r.u32("config length"), "config").decode("utf-8"))
        config = ModelConfig(**meta.pop("model"))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"invalid config: {exc}") from exc
    state = {}
    for i in range(r.u32("tensor count")):
        try:
            name = r.take(r.u32(f"tensor {i} name length"), f"tensor {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"tensor {i} name is not UTF-8") from exc
        rank = r.u32(f"rank of {name}")
        shape = tuple(r.u64(f"dims of {name}") for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(r.take(4 * n, f"data of {name}"), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes after tensor table")
    model = ClipModel.__new__(ClipModel)
    model.config = config
    ref = ClipModel(config, seed=0)
    model.params = ref.params
    try:
        model.load_state_dict(state)
    except Exception as exc:
        raise CheckpointFormatError(f"tensor table does not match model config: {exc}") from exc
    return Checkpoint(model, meta)


def save(path: str | Path, model: ClipModel, meta: dict | None = None) -> Path:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    data = encode(model, meta)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load(path: str | Path) -> Checkpoint:
    return decode(Path(path).read_bytes())
