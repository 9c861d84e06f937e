"""Reader and writer for the big-endian IDX format used by MNIST."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    def __init__(self, path, reason: str):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{path}: {reason}")


def _read_bytes(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    path = Path(path)
    buf = _read_bytes(path)
    if len(buf) < 4:
        raise IdxFormatError(path, "file shorter than the 4-byte magic number")
    (magic,) = struct.unpack_from(">I", buf, 0)
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(path, f"bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise IdxFormatError(path, f"bad magic number 0x{magic:08x} (only unsigned-byte IDX is supported)")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxFormatError(path, "truncated header")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    count = int(np.prod(dims))
    if len(buf) - header < count:
        raise IdxFormatError(path, f"truncated data: expected {count} bytes, found {len(buf) - header}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", 0x00000800 | array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())
