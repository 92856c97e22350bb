"""On-disk formats: GDVT tensor files and binary PGM images.

GDVT layout (little-endian): magic b"GDVT", version u8 = 1, rank u8, one u32
per dim, then the float32 payload in row-major order. Storage narrows to
32-bit; arrays widen back to float64 on load.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GDVT"
VERSION = 1


class TensorFileError(ValueError):
    """Malformed or truncated GDVT file."""


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.float32)
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise TensorFileError(f"{path}: not a GDVT file")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported GDVT version {version}")
    offset = 6
    if len(raw) < offset + 4 * rank:
        raise TensorFileError(f"{path}: truncated GDVT header")
    dims = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    payload = raw[offset:]
    if len(payload) != 4 * count:
        raise TensorFileError(
            f"{path}: payload holds {len(payload)} bytes, expected {4 * count}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return arr.astype(np.float64)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write an H,W array in [0,1] as a binary (P5) graymap, maxval 255."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs an H,W array, got shape {img.shape}")
    h, w = img.shape
    data = np.round(img * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
