"""Built-in localization map producers and fusion-input assembly.

Every producer maps an RGB raster to a float32 ``(h, w)`` map in [0, 1]
and never raises on valid rasters: degenerate statistics give a constant
0.5 map ("no evidence").
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from ..errors import ContractError, InputError, FormatError
from .fmap import read_fmap, resize_bilinear

FILL_VALUE = 0.5
BUILTIN_PRODUCERS = ("adq1", "blk", "noise")
BT601 = np.array([0.299, 0.587, 0.114])

# first 15 AC positions (row, col) of the JPEG zigzag scan
ZIGZAG_AC15 = ((0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1),
               (3, 0), (4, 0), (3, 1), (2, 2), (1, 3), (0, 4), (0, 5))
DQ_PERIODS = range(2, 17)
DQ_GAIN = 1.2
HIST_RANGE = 128
MIN_AC_SAMPLES = 16


@dataclass
class FeatureMap:
    values: np.ndarray
    producer: str

    @property
    def shape(self):
        return self.values.shape


def _constant(h: int, w: int) -> np.ndarray:
    return np.full((h, w), FILL_VALUE, dtype=np.float32)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma as float64 ``(h, w)``."""
    rgb = np.asarray(rgb)
    if rgb.size == 0:
        raise InputError("empty image")
    if rgb.ndim == 2:
        return rgb.astype(np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InputError(f"expected an (h, w, 3) RGB raster, got shape {rgb.shape}")
    return rgb.astype(np.float64) @ BT601


def _as_luma(image) -> np.ndarray:
    img = np.asarray(image)
    return luminance(img) if img.ndim == 3 else img.astype(np.float64)


def block_dct8(luma: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II of every grid-aligned 8x8 block of ``luma - 128``.

    Returns ``(blocks_y, blocks_x, 8, 8)``; bottom/right remainders are dropped.
    """
    luma = np.asarray(luma, dtype=np.float64)
    h, w = luma.shape
    by, bx = h // 8, w // 8
    if by == 0 or bx == 0:
        raise InputError(f"image {h}x{w} is smaller than one 8x8 block")
    blocks = (luma[:by * 8, :bx * 8] - 128.0).reshape(by, 8, bx, 8).transpose(0, 2, 1, 3)
    return sfft.dctn(blocks, type=2, norm="ortho", axes=(2, 3))


def block_idct8(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`block_dct8` back to the cropped pixel grid."""
    by, bx = coeffs.shape[:2]
    blocks = sfft.idctn(coeffs, type=2, norm="ortho", axes=(2, 3)) + 128.0
    return blocks.transpose(0, 2, 1, 3).reshape(by * 8, bx * 8)


def _replicate(cells: np.ndarray, cell: int, h: int, w: int) -> np.ndarray:
    """Blow a per-cell grid up to pixels; edge cells extend over any remainder."""
    up = np.repeat(np.repeat(cells, cell, axis=0), cell, axis=1)
    ph, pw = max(0, h - up.shape[0]), max(0, w - up.shape[1])
    if ph or pw:
        up = np.pad(up, ((0, ph), (0, pw)), mode="edge")
    return up[:h, :w].astype(np.float32)


def _minmax(values: np.ndarray):
    lo, hi = float(values.min()), float(values.max())
    if not np.isfinite(lo) or not np.isfinite(hi) or hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return None
    return (values - lo) / (hi - lo)


def _period_gain(hist: np.ndarray, smooth: np.ndarray, centre: int) -> float:
    """How strongly the best comb period beats the histogram as a whole."""
    offsets = np.arange(hist.size) - centre
    nonzero = offsets != 0
    base_den = smooth[nonzero].sum()
    if base_den <= 0:
        return 0.0
    baseline = hist[nonzero].sum() / base_den
    best = 0.0
    for p in DQ_PERIODS:
        teeth = nonzero & (offsets % p == 0)
        den = smooth[teeth].sum()
        if den > 0:
            best = max(best, hist[teeth].sum() / den)
    return best / baseline


def adq1_map(image) -> np.ndarray:
    """Aligned double-quantization map from decoded pixels.

    Per AC frequency the rounded coefficients are histogrammed over all
    blocks. A frequency takes part only if some period in 2..16 makes the
    comb teeth stand out from their 5-bin neighbourhood by the gain factor.
    Each block then gets ``r = H(bin) / max(1, Hs(bin))``; sitting in a
    comb valley (``r < 1``) is tamper evidence, so the block posterior is
    ``1 / (1 + prod r)``.
    """
    luma = _as_luma(image)
    h, w = luma.shape
    if h < 8 or w < 8:
        return _constant(h, w)
    coeffs = block_dct8(luma)
    by, bx = coeffs.shape[:2]
    kernel = np.ones(5) / 5.0
    log_r = np.zeros((by, bx))
    active = 0
    for u, v in ZIGZAG_AC15:
        q = np.rint(coeffs[:, :, u, v]).astype(np.int64)
        inside = np.abs(q) <= HIST_RANGE
        if (inside & (q != 0)).sum() < MIN_AC_SAMPLES:
            continue
        idx = q + HIST_RANGE
        hist = np.bincount(idx[inside], minlength=2 * HIST_RANGE + 1).astype(np.float64)
        smooth = np.convolve(hist, kernel, mode="same")
        if _period_gain(hist, smooth, HIST_RANGE) <= DQ_GAIN:
            continue
        active += 1
        r = hist / np.maximum(1.0, smooth)
        contrib = np.zeros_like(log_r)
        contrib[inside] = np.log(np.maximum(r[idx[inside]], 1e-12))
        log_r += contrib
    if active == 0:
        return _constant(h, w)
    # 1 / (1 + exp(s)) written stably
    post = 0.5 * (1.0 - np.tanh(0.5 * log_r))
    return np.clip(_replicate(post, 8, h, w), 0.0, 1.0)


def _cell_sums(values: np.ndarray, cell: int, cy: int, cx: int) -> np.ndarray:
    return values[:cy * cell, :cx * cell].reshape(cy, cell, cx, cell).sum(axis=(1, 3))


def _window_to_cells(score: np.ndarray, cy: int, cx: int) -> np.ndarray:
    # each cell takes the mean score of the windows covering it
    total = np.zeros((cy, cx))
    count = np.zeros((cy, cx))
    wy, wx = score.shape
    for dy in range(cy - wy + 1):
        for dx in range(cx - wx + 1):
            total[dy:dy + wy, dx:dx + wx] += score
            count[dy:dy + wy, dx:dx + wx] += 1
    return total / np.maximum(count, 1)


def _box(cells: np.ndarray, span: int) -> np.ndarray:
    """Sums over every ``span x span`` run of cells (stride one cell)."""
    cy, cx = cells.shape
    sy, sx = min(span, cy), min(span, cx)
    c = np.pad(cells.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    return c[sy:, sx:] - c[:-sy, sx:] - c[sy:, :-sx] + c[:-sy, :-sx]


def blk_map(image) -> np.ndarray:
    """Blocking-grid inconsistency map.

    Second differences across every pixel seam are split into grid seams
    (between columns/rows 7 and 8 mod 8) and interior seams, averaged over
    32x32 windows with stride 8. Windows with a weak grid score high.
    """
    luma = _as_luma(image)
    h, w = luma.shape
    cy, cx = h // 8, w // 8
    if cy == 0 or cx == 0:
        return _constant(h, w)
    # seam x sits between pixels x and x+1: jump minus mean neighbouring slope
    d = np.diff(luma, axis=1)
    sh = np.zeros((h, w))
    sh[:, 1:w - 2] = np.abs(d[:, 1:-1] - 0.5 * (d[:, :-2] + d[:, 2:]))
    valid_h = np.zeros((h, w), bool)
    valid_h[:, 1:w - 2] = True
    d = np.diff(luma, axis=0)
    sv = np.zeros((h, w))
    sv[1:h - 2] = np.abs(d[1:-1] - 0.5 * (d[:-2] + d[2:]))
    valid_v = np.zeros((h, w), bool)
    valid_v[1:h - 2] = True

    grid_h = valid_h & (np.arange(w) % 8 == 7)[None, :]
    grid_v = valid_v & (np.arange(h) % 8 == 7)[:, None]
    inner_h, inner_v = valid_h & ~grid_h, valid_v & ~grid_v

    def cs(a):
        return _cell_sums(a, 8, cy, cx)

    b_sum = _box(cs(sh * grid_h) + cs(sv * grid_v), 4)
    b_cnt = _box(cs(grid_h.astype(float)) + cs(grid_v.astype(float)), 4)
    i_sum = _box(cs(sh * inner_h) + cs(sv * inner_v), 4)
    i_cnt = _box(cs(inner_h.astype(float)) + cs(inner_v.astype(float)), 4)
    boundary = b_sum / np.maximum(b_cnt, 1)
    interior = i_sum / np.maximum(i_cnt, 1)
    score = boundary / (boundary + interior + 1e-6)
    norm = _minmax(1.0 - score)
    if norm is None:
        return _constant(h, w)
    cells = _window_to_cells(norm, cy, cx)
    return np.clip(_replicate(cells, 8, h, w), 0.0, 1.0)


def noise_residual_map(image) -> np.ndarray:
    """Local noise level: ``|luma - median3x3|`` over 16x16 windows, stride 8."""
    luma = _as_luma(image)
    h, w = luma.shape
    cy, cx = h // 8, w // 8
    if cy == 0 or cx == 0:
        return _constant(h, w)
    resid = np.abs(luma - ndimage.median_filter(luma, size=3, mode="reflect"))
    cells = _cell_sums(resid, 8, cy, cx)
    norm = _minmax(_box(cells, 2))
    if norm is None:
        return _constant(h, w)
    cells = _window_to_cells(norm, cy, cx)
    return np.clip(_replicate(cells, 8, h, w), 0.0, 1.0)


PRODUCERS = {"adq1": adq1_map, "blk": blk_map, "noise": noise_residual_map}


def builtin_maps(image) -> list[FeatureMap]:
    """All built-in maps, in channel order."""
    return [FeatureMap(PRODUCERS[name](image), name) for name in BUILTIN_PRODUCERS]


def load_external_map(path, h: int, w: int, name: str = "external") -> FeatureMap:
    values = read_fmap(path)
    if values.shape[0] != 1:
        raise FormatError(f"{path}: external map must have 1 channel, found {values.shape[0]}")
    values = np.clip(values[0], 0.0, 1.0)
    if values.shape != (h, w):
        values = np.clip(resize_bilinear(values, h, w), 0.0, 1.0)
    return FeatureMap(values.astype(np.float32), f"external:{name}")


def stack_maps(maps, k: int) -> np.ndarray:
    """Stack maps into the ``(1, k, h, w)`` fusion input, filling with 0.5."""
    arrays = [np.asarray(m.values if isinstance(m, FeatureMap) else m, dtype=np.float32) for m in maps]
    if not arrays:
        raise ContractError("stack_maps needs at least one map")
    if len(arrays) > k:
        raise ContractError(f"{len(arrays)} maps exceed K={k}")
    shape = arrays[0].shape
    for i, a in enumerate(arrays):
        if a.ndim != 2 or a.shape != shape:
            raise ContractError(f"map {i} has shape {a.shape}, expected {shape}")
    out = np.full((1, k) + shape, FILL_VALUE, dtype=np.float32)
    for i, a in enumerate(arrays):
        out[0, i] = a
    return out
