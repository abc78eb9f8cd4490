"""TSR1 tensor files.

Layout, all integers little-endian::

    offset 0        b"TSR1"
    offset 4        u8   rank (>= 1)
    offset 5        u32  dims[rank] (each >= 1)
    offset 5+4r     u8   dtype tag (0 = float32, 1 = uint8)
    offset 6+4r     payload, row-major, no compression

A file therefore occupies ``6 + 4 * rank + payload`` bytes.
"""

import logging
import math
import struct
from pathlib import Path

import numpy as np

from adverseg.errors import FormatError

logger = logging.getLogger("adverseg.tsr")

MAGIC = b"TSR1"

DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_TAG_FOR_DTYPE = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


def header_size(rank: int) -> int:
    return 6 + 4 * rank


def encode_tensor(t: np.ndarray) -> bytes:
    """Serialize a float32 or uint8 array."""
    tag = _TAG_FOR_DTYPE.get(np.dtype(t.dtype))
    if tag is None:
        raise FormatError(f"unsupported dtype {t.dtype}; TSR1 stores float32 or uint8")
    if t.ndim < 1 or t.ndim > 255:
        raise FormatError(f"TSR1 rank must be in 1..255, got {t.ndim}")
    if min(t.shape) < 1:
        raise FormatError(f"TSR1 dims must be >= 1, got {t.shape}")
    header = MAGIC + struct.pack(f"<B{t.ndim}IB", t.ndim, *t.shape, tag)
    return header + np.ascontiguousarray(t, dtype=DTYPE_TAGS[tag]).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor starting at ``offset``; returns it and the offset just past it."""
    end = len(buf)
    if end - offset < 5:
        raise FormatError("truncated TSR1 header", offset)
    if buf[offset : offset + 4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}, expected {MAGIC!r}", offset)
    rank = buf[offset + 4]
    if rank < 1:
        raise FormatError("TSR1 rank must be >= 1", offset + 4)
    dims_at = offset + 5
    if end - dims_at < 4 * rank + 1:
        raise FormatError(f"truncated TSR1 dims for rank {rank}", dims_at)
    dims = struct.unpack_from(f"<{rank}I", buf, dims_at)
    for i, dim in enumerate(dims):
        if dim < 1:
            raise FormatError(f"dimension {i} is zero", dims_at + 4 * i)
    tag_at = dims_at + 4 * rank
    dtype = DTYPE_TAGS.get(buf[tag_at])
    if dtype is None:
        raise FormatError(f"unknown dtype tag {buf[tag_at]}", tag_at)
    payload_at = tag_at + 1
    size = math.prod(dims) * dtype.itemsize
    if end - payload_at < size:
        raise FormatError(
            f"truncated payload: need {size} bytes, found {end - payload_at}", payload_at
        )
    data = np.frombuffer(buf, dtype=dtype, count=math.prod(dims), offset=payload_at)
    native = data.astype(dtype.newbyteorder("="), copy=True).reshape(dims)
    return native, payload_at + size


def write_tensor(path: Path | str, t: np.ndarray) -> int:
    """Write ``t`` to ``path``; returns the number of bytes written."""
    blob = encode_tensor(t)
    Path(path).write_bytes(blob)
    logger.debug("wrote %s %s to %s", t.dtype, t.shape, path)
    return len(blob)


def read_tensor(path: Path | str) -> np.ndarray:
    buf = Path(path).read_bytes()
    tensor, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor", end)
    return tensor
