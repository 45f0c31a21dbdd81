"""Raster I/O: RGB images as PNG or binary PPM, masks as binary PGM."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import InputError

MASK_THRESHOLD = 128


def read_rgb(path) -> np.ndarray:
    """Decode an 8-bit RGB raster to a ``(h, w, 3)`` uint8 array."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from None
    if arr.size == 0:
        raise InputError(f"image {path} is empty")
    return arr


def write_rgb(path, rgb: np.ndarray) -> Path:
    """Write PNG or PPM depending on the suffix."""
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB").save(path, format=fmt)
    return path


def read_mask(path) -> np.ndarray:
    """Boolean tampered mask; gray levels >= 128 count as tampered."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except (OSError, UnidentifiedImageError) as exc:
        raise InputError(f"cannot decode mask {path}: {exc}") from None
    return arr >= MASK_THRESHOLD


def write_mask(path, mask: np.ndarray) -> Path:
    path = Path(path)
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, "L").save(path, format="PPM")
    return path


def write_gray_png(path, values: np.ndarray) -> Path:
    """Render a [0, 1] map as 8-bit grayscale, rounding value*255 half up."""
    path = Path(path)
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    arr = np.floor(v * 255 + 0.5).astype(np.uint8)
    Image.fromarray(arr, "L").save(path, format="PNG")
    return path
