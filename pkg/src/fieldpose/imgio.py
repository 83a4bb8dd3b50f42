"""Image file I/O: 8-bit PNG for viewing, raw f32 ("IMGF") for exact tests.

The raw format is little-endian: magic "IMGF", u32 height, width, channels,
then float32 data in C order. Depth and opacity maps are stored as
single-channel raw images.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

_MAGIC = b"IMGF"


def write_png(image: np.ndarray, path) -> None:
    """Clip to [0,1] and write 8-bit PNG (grayscale or RGB)."""
    arr = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(Path(path))


def read_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(Path(path)))
    return arr.astype(np.float64) / 255.0


def write_raw(image: np.ndarray, path) -> None:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("raw images must be (H, W) or (H, W, C)")
    h, w, c = arr.shape
    with open(Path(path), "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<3I", h, w, c))
        f.write(arr.astype("<f4").tobytes())


def read_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an IMGF raw image")
    h, w, c = struct.unpack_from("<3I", data, 4)
    expected = 16 + 4 * h * w * c
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float64)
    return arr[:, :, 0] if c == 1 else arr
