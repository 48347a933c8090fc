"""Binary checkpoints: header, config snapshot, named f32 arrays.

Layout (all integers little-endian):
    magic    8 bytes  b"CSEGCKPT"
    version  u32
    seed     i64
    cfg_len  u32, then cfg_len bytes of config JSON
    n        u32 entry count
    entry*n  u16 path length + UTF-8 path
             u8 trainable flag (1 = parameter, 0 = buffer)
             u8 ndim, then ndim * u32 dims
             float32 data, C order

Compute runs in f64 but weights are stored as f32, so a round-trip is
only guaranteed to reproduce forward outputs to ~1e-6 relative. Both
trainable parameters and buffers (batch-norm running stats) are saved;
the trainable flag lets callers count true parameters.
"""

import json
import struct
from dataclasses import asdict

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError
from .model import ModelConfig, build_model
from .params import iter_state

MAGIC = b"CSEGCKPT"
VERSION = 1


def _leaf_array(leaf) -> np.ndarray:
    return leaf.data if isinstance(leaf, Tensor) else leaf


def save_checkpoint(path: str, params, cfg: ModelConfig,
                    seed: int = 0) -> None:
    cfg_bytes = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    entries = list(iter_state(params))
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<q", seed),
              struct.pack("<I", len(cfg_bytes)), cfg_bytes,
              struct.pack("<I", len(entries))]
    for name, leaf, trainable in entries:
        arr = np.ascontiguousarray(_leaf_array(leaf), dtype="<f4")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", int(trainable), arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Cursor:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint "
                                  f"(wanted {n} bytes at offset {self.off})")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def read_entries(path: str) -> tuple:
    """-> (cfg, seed, {name: (f32 array, trainable flag)})."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    if cur.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint")
    version = cur.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: version {version}, "
                              f"expected {VERSION}")
    seed = cur.unpack("<q")
    cfg_len = cur.unpack("<I")
    try:
        raw = json.loads(cur.take(cfg_len).decode("utf-8"))
        cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                             for k, v in raw.items()})
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config snapshot: {exc}") from None
    entries = {}
    for _ in range(cur.unpack("<I")):
        name = cur.take(cur.unpack("<H")).decode("utf-8")
        trainable, ndim = cur.unpack("<BB")
        shape = cur.unpack(f"<{ndim}I") if ndim else ()
        if ndim == 1:
            shape = (shape,)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(cur.take(4 * count), dtype="<f4")
        entries[name] = (data.reshape(shape), bool(trainable))
    if cur.off != len(cur.buf):
        raise CheckpointError(f"{path}: {len(cur.buf) - cur.off} trailing "
                              f"bytes after last entry")
    return cfg, seed, entries


def load_checkpoint(path: str) -> tuple:
    """-> (params, cfg, seed) with weights restored from the file."""
    cfg, seed, entries = read_entries(path)
    params, _ = build_model(cfg, seed=0)
    seen = set()
    for name, leaf, _ in iter_state(params):
        if name not in entries:
            raise CheckpointError(f"{path}: missing entry {name!r}")
        arr = _leaf_array(leaf)
        stored, _ = entries[name]
        if stored.shape != arr.shape:
            raise CheckpointError(f"{path}: {name} stored {stored.shape} "
                                  f"vs model {arr.shape}")
        arr[...] = stored.astype(np.float64)
        seen.add(name)
    extra = set(entries) - seen
    if extra:
        raise CheckpointError(f"{path}: unknown entries "
                              f"{sorted(extra)[:3]}")
    return params, cfg, seed


def checkpoint_param_count(path: str) -> int:
    """Scalars in trainable entries; matches the profiler's param count."""
    _, _, entries = read_entries(path)
    return sum(arr.size for arr, trainable in entries.values() if trainable)
