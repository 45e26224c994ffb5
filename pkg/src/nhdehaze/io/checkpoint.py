"""Binary checkpoint archive.

Layout, little-endian::

    b"DHDC" | u32 version | u32 n_tensors | tensor* | u32 n_state | tensor* | u32 crc32

where each tensor record is ``u32 name_len | name (utf-8) | u32 rank |
u32 extents[rank] | f32 data``. The CRC covers every byte before it.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

MAGIC = b"DHDC"
VERSION = 1

Tensors = Dict[str, np.ndarray]


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint file."""


def _encode_section(tensors: Tensors) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def section(self) -> Tensors:
        out = {}
        for _ in range(self.u32()):
            name = self.take(self.u32()).decode("utf-8")
            rank = self.u32()
            shape = struct.unpack(f"<{rank}I", self.take(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
            out[name] = arr.astype(np.float32)
        return out


def save_checkpoint(path: Union[str, Path], tensors: Tensors, state: Tensors = None) -> None:
    body = MAGIC + struct.pack("<I", VERSION) + _encode_section(tensors) + _encode_section(state or {})
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_checkpoint(path: Union[str, Path]) -> Tuple[Tensors, Tensors]:
    """Return ``(tensors, optimizer_state)`` as float32 arrays."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupted or truncated")
    reader = _Reader(body)
    reader.pos = 8
    tensors = reader.section()
    state = reader.section()
    if reader.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return tensors, state


def checkpoint_save(path, model, optimizer_state: Tensors = None) -> None:
    save_checkpoint(path, model.state_dict(), optimizer_state)


def checkpoint_load(path, model) -> Tensors:
    """Load weights into ``model`` (shape mismatches name the tensor) and return the state section."""
    tensors, state = load_checkpoint(path)
    model.load_state_dict(tensors)
    return state
