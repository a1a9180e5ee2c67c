"""Binary checkpoints and checkpoint averaging.

Layout (all integers little-endian)::

    b"DPEC"                     magic
    u32  version                (currently 1)
    u64  step
    u64  n, then n bytes        config snapshot, UTF-8 key=value lines
    u64  entry count
    per entry:
      u64 name length, UTF-8 name
      u64 rank, rank x u64 dims
      prod(dims) x f32 values, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"DPEC"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    step: int = 0
    config: str = ""  # key=value snapshot
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        cfg = self.config.encode("utf-8")
        parts = [MAGIC, struct.pack("<IQQ", VERSION, self.step, len(cfg)), cfg]
        parts.append(struct.pack("<Q", len(self.params)))
        for name, arr in self.params.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            parts.append(struct.pack("<Q", len(raw)) + raw)
            parts.append(struct.pack(f"<Q{arr.ndim}Q", arr.ndim, *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        version, step, n_cfg = struct.unpack_from("<IQQ", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 4 + 20
        config = buf[pos : pos + n_cfg].decode("utf-8")
        pos += n_cfg
        (count,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            size = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            if name in params:
                raise CheckpointError(f"duplicate parameter {name!r}")
            params[name] = arr.astype(np.float32)
        if pos != len(buf):
            raise CheckpointError(f"{len(buf) - pos} trailing bytes after last entry")
        return cls(params, step, config)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def from_params(params: Mapping[str, object], step: int, config: str = "") -> Checkpoint:
    arrays = {k: np.array(getattr(v, "data", v), dtype=np.float32) for k, v in params.items()}
    return Checkpoint(arrays, step, config)


def average_checkpoints(ckpts: Sequence[Checkpoint]) -> Checkpoint:
    """Elementwise mean of parameters; the result carries the largest step."""
    if not ckpts:
        raise CheckpointError("nothing to average")
    names = set(ckpts[0].params)
    for c in ckpts[1:]:
        if set(c.params) != names:
            diff = sorted(names.symmetric_difference(c.params))
            raise CheckpointError(f"parameter names differ: {diff}")
        for k in names:
            if c.params[k].shape != ckpts[0].params[k].shape:
                raise CheckpointError(f"shape mismatch for {k!r}")
    out = {}
    for k in ckpts[0].params:  # keep the first checkpoint's entry order
        acc = np.zeros(ckpts[0].params[k].shape, dtype=np.float64)
        for c in ckpts:
            acc += c.params[k]
        out[k] = (acc / len(ckpts)).astype(np.float32)
    last = max(ckpts, key=lambda c: c.step)
    return Checkpoint(out, last.step, last.config)
