"""Named-tensor container shared by the feature, matching, and descriptor heads.

Binary layout (all little-endian):
  header    magic ``PDLC``, version u16, tensor count u32
  per tensor
            name length u16, name bytes (UTF-8), rank u8,
            dims (u64 each), data (f64, row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

MAGIC = b"PDLC"
VERSION = 1


def save_tensors(path: str | Path, tensors: dict[str, NDArray]) -> None:
    """Write named float64 tensors; insertion order is preserved."""
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, tensor in tensors.items():
        arr = np.asarray(tensor, dtype=np.float64)  # tobytes() emits C order
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor rank too large: {arr.ndim}")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path: str | Path) -> dict[str, NDArray[np.float64]]:
    """Read a tensor container; raises ValueError on malformed content."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"not a tensor container (bad magic): {path}")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")

    offset = 10
    tensors: dict[str, NDArray[np.float64]] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}Q", raw, offset)
        offset += 8 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        end = offset + 8 * size
        if end > len(raw):
            raise ValueError(f"truncated tensor data for {name!r}")
        data = np.frombuffer(raw[offset:end], dtype="<f8").reshape(dims)
        offset = end
        tensors[name] = data.astype(np.float64)
    if offset != len(raw):
        raise ValueError(f"{len(raw) - offset} trailing bytes after last tensor")
    return tensors


def expect_shape(tensors: dict[str, NDArray], name: str, shape: tuple[int, ...]) -> NDArray:
    """Fetch a named tensor, validating its shape against the configuration."""
    if name not in tensors:
        raise ValueError(f"missing tensor {name!r}")
    arr = tensors[name]
    if arr.shape != shape:
        raise ValueError(f"weight shape mismatch: {name!r} is {arr.shape}, expected {shape}")
    return arr
