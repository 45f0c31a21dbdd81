"""Procedural forgery corpus: base images, forgeries with masks, JPEG history."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from ..errors import ConfigError, InputError, SpecError

KINDS = ("splicing", "copy_move", "removal")
SHAPES = ("rect", "ellipse")
MIN_SIZE, MAX_SIZE = 64, 512
Q_RANGE = (50, 95)
MIN_Q_GAP = 10
AREA_BOUNDS = (0.02, 0.30)


def jpeg_round_trip(raster: np.ndarray, quality: int, source: str = "<memory>") -> np.ndarray:
    """Baseline JPEG encode and decode at ``quality`` with 4:4:4 chroma."""
    if not Q_RANGE[0] <= quality <= Q_RANGE[1]:
        raise ConfigError(f"jpeg quality {quality} outside [{Q_RANGE[0]}, {Q_RANGE[1]}]")
    buf = io.BytesIO()
    try:
        Image.fromarray(np.asarray(raster, dtype=np.uint8), "RGB").save(
            buf, format="JPEG", quality=int(quality), subsampling=0, optimize=False)
        buf.seek(0)
        with Image.open(buf) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise InputError(f"JPEG codec failed for {source}: {exc}") from None


def _value_noise(rng, h, w, cell):
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.random((gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    return ndimage.map_coordinates(grid, np.meshgrid(ys, xs, indexing="ij"), order=3, mode="nearest")


def gen_base_image(seed: int, h: int = 128, w: int = 128) -> np.ndarray:
    """Gradient background, 3-8 filled shapes, value-noise texture and sensor noise."""
    if not (MIN_SIZE <= h <= MAX_SIZE and MIN_SIZE <= w <= MAX_SIZE):
        raise ConfigError(f"image size {h}x{w} outside [{MIN_SIZE}, {MAX_SIZE}]")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = rng.uniform(0, 2 * np.pi)
    t = xx * np.cos(theta) + yy * np.sin(theta)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c0, c1 = rng.uniform(30, 225, 3), rng.uniform(30, 225, 3)
    img = c0 + t[..., None] * (c1 - c0)

    for _ in range(rng.integers(3, 9)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ay, ax = rng.uniform(0.05, 0.3) * h, rng.uniform(0.05, 0.3) * w
        if rng.random() < 0.5:
            m = (np.abs(yy - cy) <= ay) & (np.abs(xx - cx) <= ax)
        else:
            m = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
        img[m] = rng.uniform(20, 235, 3)

    amp = rng.uniform(8, 30)
    tex = _value_noise(rng, h, w, int(rng.integers(6, 20))) - 0.5
    img += amp * tex[..., None] * rng.uniform(0.7, 1.3, 3)
    sigma = rng.uniform(1.0, 4.0)
    img += rng.normal(0.0, sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ForgerySpec:
    kind: str
    shape: str
    top: int
    left: int
    height: int
    width: int
    q1: int
    q2: int
    seed: int
    src_top: int = 0
    src_left: int = 0

    def validate(self, h: int, w: int) -> None:
        if self.kind not in KINDS:
            raise SpecError(f"unknown forgery kind {self.kind!r}")
        if self.shape not in SHAPES:
            raise SpecError(f"unknown region shape {self.shape!r}")
        for q in (self.q1, self.q2):
            if not Q_RANGE[0] <= q <= Q_RANGE[1]:
                raise SpecError(f"quality {q} outside [{Q_RANGE[0]}, {Q_RANGE[1]}]")
        if self.q1 == self.q2:
            raise SpecError("host and final quality must differ")
        boxes = [(self.top, self.left)]
        if self.kind == "copy_move":
            boxes.append((self.src_top, self.src_left))
        for t, l in boxes:
            if t < 0 or l < 0 or t + self.height > h or l + self.width > w:
                raise SpecError(f"region at ({t}, {l}) size {self.height}x{self.width} leaves the {h}x{w} image")
        frac = region_mask(self, h, w).sum() / (h * w)
        if not AREA_BOUNDS[0] <= frac <= AREA_BOUNDS[1]:
            raise SpecError(f"region covers {frac:.3f} of the image, outside {AREA_BOUNDS}")
        if self.kind == "copy_move" and _overlap(self):
            raise SpecError("copy-move source and target regions overlap")


def _overlap(spec: ForgerySpec) -> bool:
    return (abs(spec.top - spec.src_top) < spec.height) and (abs(spec.left - spec.src_left) < spec.width)


def _shape_mask(shape: str, height: int, width: int) -> np.ndarray:
    if shape == "rect":
        return np.ones((height, width), bool)
    yy = (np.arange(height) + 0.5 - height / 2) / (height / 2)
    xx = (np.arange(width) + 0.5 - width / 2) / (width / 2)
    return yy[:, None] ** 2 + xx[None, :] ** 2 <= 1.0


def region_mask(spec: ForgerySpec, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), bool)
    mask[spec.top:spec.top + spec.height, spec.left:spec.left + spec.width] = \
        _shape_mask(spec.shape, spec.height, spec.width)
    return mask


def sample_qualities(rng) -> tuple[int, int]:
    while True:
        q1, q2 = (int(q) for q in rng.integers(Q_RANGE[0], Q_RANGE[1] + 1, 2))
        if abs(q1 - q2) >= MIN_Q_GAP:
            return q1, q2


def random_spec(rng, h: int, w: int, kind: str | None = None, q1=None, q2=None) -> ForgerySpec:
    """Draw a valid spec; kind and qualities may be pinned."""
    kind = kind or KINDS[int(rng.integers(len(KINDS)))]
    if q1 is None or q2 is None:
        q1, q2 = sample_qualities(rng)
    seed = int(rng.integers(2**31))
    for _ in range(1000):
        shape = SHAPES[int(rng.integers(2))]
        frac = rng.uniform(0.04, 0.22 if kind == "copy_move" else 0.27)
        box = frac * h * w / (1.0 if shape == "rect" else np.pi / 4)
        aspect = rng.uniform(0.6, 1.6)
        height = int(round(np.sqrt(box * aspect)))
        width = int(round(box / max(height, 1)))
        if not (4 <= height <= h - 2 and 4 <= width <= w - 2):
            continue
        top = int(rng.integers(0, h - height + 1))
        left = int(rng.integers(0, w - width + 1))
        src = (0, 0)
        if kind == "copy_move":
            src = (int(rng.integers(0, h - height + 1)), int(rng.integers(0, w - width + 1)))
        spec = ForgerySpec(kind, shape, top, left, height, width, int(q1), int(q2), seed, *src)
        try:
            spec.validate(h, w)
        except SpecError:
            continue
        return spec
    raise SpecError(f"could not place a {kind} region in a {h}x{w} image")


def _noise_sigma(raster: np.ndarray) -> float:
    luma = raster.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    resid = luma - ndimage.median_filter(luma, size=3, mode="reflect")
    return 1.4826 * float(np.median(np.abs(resid - np.median(resid))))


def make_forgery(host: np.ndarray, donor: np.ndarray, spec: ForgerySpec):
    """Return ``(tampered raster, mask)``; the mask is uint8 with 255 inside."""
    host = np.asarray(host, dtype=np.uint8)
    donor = np.asarray(donor, dtype=np.uint8)
    if host.shape != donor.shape:
        raise SpecError(f"host {host.shape} and donor {donor.shape} differ in size")
    h, w = host.shape[:2]
    spec.validate(h, w)
    mask = region_mask(spec, h, w)
    first = jpeg_round_trip(host, spec.q1)
    out = first.copy()
    if spec.kind == "splicing":
        out[mask] = donor[mask]
    elif spec.kind == "copy_move":
        src = np.zeros_like(mask)
        src[spec.src_top:spec.src_top + spec.height, spec.src_left:spec.src_left + spec.width] = \
            _shape_mask(spec.shape, spec.height, spec.width)
        out[mask] = first[src]
    else:
        rng = np.random.default_rng(spec.seed)
        fill = np.median(first.reshape(-1, 3), axis=0)
        noise = rng.normal(0.0, _noise_sigma(first), (int(mask.sum()), 1))
        out[mask] = np.clip(np.rint(fill + noise), 0, 255).astype(np.uint8)
    final = jpeg_round_trip(out, spec.q2)
    return final, np.where(mask, 255, 0).astype(np.uint8)
