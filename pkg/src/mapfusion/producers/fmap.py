"""FMAP map files.

Layout: ``FMAP1\\n``, an ASCII ``"w h c\\n"`` header, then ``w*h*c``
little-endian float32 values, channel-major and row-major within a channel.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import FormatError

FMAP_MAGIC = b"FMAP1\n"


def write_fmap(path, values: np.ndarray) -> Path:
    """Write a ``(h, w)`` or ``(c, h, w)`` array."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise FormatError(f"FMAP payload must be (h, w) or (c, h, w), got shape {arr.shape}")
    c, h, w = arr.shape
    path = Path(path)
    path.write_bytes(FMAP_MAGIC + f"{w} {h} {c}\n".encode("ascii") + np.ascontiguousarray(arr).tobytes())
    return path


def read_fmap(path) -> np.ndarray:
    """Return the payload as a float32 ``(c, h, w)`` array."""
    data = Path(path).read_bytes()
    magic = data[:len(FMAP_MAGIC)]
    if magic != FMAP_MAGIC:
        raise FormatError(f"{path}: bad FMAP magic {magic!r}, expected {FMAP_MAGIC!r}")
    end = data.find(b"\n", len(FMAP_MAGIC))
    try:
        w, h, c = (int(t) for t in data[len(FMAP_MAGIC):end].decode("ascii").split())
    except (ValueError, UnicodeDecodeError):
        raise FormatError(f"{path}: malformed FMAP header") from None
    if end < 0 or min(w, h, c) < 1:
        raise FormatError(f"{path}: malformed FMAP header")
    payload = data[end + 1:]
    if len(payload) != 4 * w * h * c:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {4 * w * h * c}")
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float32)


def resize_bilinear(values: np.ndarray, h: int, w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D map (corners map onto corners)."""
    src_h, src_w = values.shape
    if (src_h, src_w) == (h, w):
        return values.copy()
    ys = np.linspace(0, src_h - 1, h)
    xs = np.linspace(0, src_w - 1, w)
    grid = np.meshgrid(ys, xs, indexing="ij")
    out = ndimage.map_coordinates(values.astype(np.float64), grid, order=1, mode="nearest")
    return out.astype(np.float32)
