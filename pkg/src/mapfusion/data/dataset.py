"""Corpus building, manifest I/O and sample loading."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError, FormatError, InputError, MapFusionError
from ..producers import (BUILTIN_PRODUCERS, PRODUCERS, read_fmap, read_mask, read_rgb, stack_maps,
                         write_fmap, write_mask, write_rgb)
from .synth import gen_base_image, make_forgery, random_spec

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")


@dataclass
class SampleRecord:
    id: str
    image: str
    mask: str
    maps: list
    split: str

    def to_dict(self):
        return {"id": self.id, "image": self.image, "mask": self.mask, "maps": list(self.maps),
                "split": self.split}


@dataclass
class Manifest:
    k: int
    producers: list
    records: list
    failed: int = 0
    version: int = MANIFEST_VERSION
    root: Path = field(default=Path("."), compare=False)

    @property
    def split_counts(self) -> dict:
        return {s: sum(r.split == s for r in self.records) for s in SPLITS}

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def path(self, rel: str) -> Path:
        return self.root / rel

    def to_dict(self):
        return {"version": self.version, "k": self.k, "producers": list(self.producers),
                "records": [r.to_dict() for r in self.records],
                "split_counts": self.split_counts, "failed": self.failed}


def producer_labels(k: int, externals=()) -> list:
    names = list(BUILTIN_PRODUCERS) + [f"external:{e}" for e in externals]
    names = names[:k]
    return names + [f"fill:{i}" for i in range(len(names), k)]


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def load_manifest(path, validate: bool = True) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {path} is not valid JSON: {exc}") from None
    try:
        if raw["version"] != MANIFEST_VERSION:
            raise FormatError(f"manifest version {raw['version']} unsupported (expected {MANIFEST_VERSION})")
        records = [SampleRecord(r["id"], r["image"], r["mask"], list(r["maps"]), r["split"])
                   for r in raw["records"]]
        m = Manifest(int(raw["k"]), list(raw["producers"]), records, int(raw.get("failed", 0)),
                     root=path.parent)
        counts = raw.get("split_counts")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"manifest {path} is malformed: {exc!r}") from None
    if counts is not None and counts != m.split_counts:
        raise FormatError(f"manifest split counts {counts} disagree with records {m.split_counts}")
    if validate:
        validate_manifest(m)
    return m


def validate_manifest(m: Manifest) -> None:
    """Check ids, splits, channel layout and that every referenced file exists."""
    if len(m.producers) != m.k:
        raise FormatError(f"{len(m.producers)} producer labels for K={m.k}")
    ids = [r.id for r in m.records]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate record ids in manifest")
    for r in m.records:
        if r.split not in SPLITS:
            raise FormatError(f"record {r.id}: unknown split {r.split!r}")
        if len(r.maps) > m.k:
            raise FormatError(f"record {r.id}: {len(r.maps)} maps exceed K={m.k}")
        for rel in [r.image, r.mask] + list(r.maps):
            if not m.path(rel).is_file():
                raise FormatError(f"record {r.id}: missing file {rel}")
        with Image.open(m.path(r.image)) as a, Image.open(m.path(r.mask)) as b:
            if a.size != b.size:
                raise FormatError(f"record {r.id}: mask size {b.size} != image size {a.size}")


def compute_sample_maps(image_path, k: int, out_dir, sample_id: str, external_dir=None,
                        externals=()) -> list:
    """Write built-in FMAPs (and copy bound externals) for one image.

    Externals are looked up as ``<external_dir>/<id>.<name>.fmap``. Returns the
    written paths in channel order, at most ``k`` of them.
    """
    rgb = read_rgb(image_path)
    out_dir = Path(out_dir)
    paths = []
    for name in BUILTIN_PRODUCERS[:k]:
        p = out_dir / f"{sample_id}.{name}.fmap"
        write_fmap(p, PRODUCERS[name](rgb))
        paths.append(p)
    for name in externals[:max(0, k - len(paths))]:
        src = Path(external_dir) / f"{sample_id}.{name}.fmap"
        if not src.is_file():
            raise InputError(f"missing external map {src}")
        values = read_fmap(src)
        p = out_dir / f"{sample_id}.{name}.fmap"
        write_fmap(p, values)
        paths.append(p)
    return paths


def _split_of(i: int, n_train: int, n_val: int) -> str:
    return "train" if i < n_train else "val" if i < n_train + n_val else "test"


def _build_one(args):
    i, seed, size, k, root, split, external_dir, externals = args
    sid = f"{i:05d}"
    root = Path(root)
    try:
        ss = np.random.SeedSequence([seed, i])
        s_host, s_donor, s_spec = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
        host = gen_base_image(s_host, size, size)
        donor = gen_base_image(s_donor, size, size)
        spec = random_spec(np.random.default_rng(s_spec), size, size)
        img, mask = make_forgery(host, donor, spec)
        image = root / "images" / f"{sid}.png"
        maskp = root / "masks" / f"{sid}.pgm"
        write_rgb(image, img)
        write_mask(maskp, mask)
        maps = compute_sample_maps(image, k, root / "maps", sid, external_dir, externals)
        rel = [p.relative_to(root).as_posix() for p in maps]
        return SampleRecord(sid, image.relative_to(root).as_posix(), maskp.relative_to(root).as_posix(),
                            rel, split), None
    except (MapFusionError, OSError, ValueError) as exc:
        return None, f"{sid}: {exc}"


def _external_names(external_dir) -> list:
    if external_dir is None:
        return []
    names = {p.name.split(".", 1)[1][:-len(".fmap")] for p in Path(external_dir).glob("*.*.fmap")}
    return sorted(names)


def build_dataset(out_dir, n_train: int = 600, n_val: int = 50, n_test: int = 50, k: int = 5,
                  seed: int = 1, size: int = 128, jobs: int = 1, external_dir=None) -> Manifest:
    """Generate images, masks and maps, then write ``manifest.json``.

    Each record draws from its own seed stream derived from ``(seed, index)``,
    so the output does not depend on ``jobs``.
    """
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        if int(n) < 1:
            raise ConfigError(f"{name} must be a positive count, got {n}")
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    if jobs < 1:
        raise ConfigError(f"jobs must be positive, got {jobs}")
    root = Path(out_dir)
    for sub in ("images", "masks", "maps"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    externals = _external_names(external_dir)
    total = n_train + n_val + n_test
    tasks = [(i, seed, size, k, str(root), _split_of(i, n_train, n_val), external_dir, externals)
             for i in range(total)]
    if jobs == 1:
        results = [_build_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_build_one, tasks, chunksize=8))
    records = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    for e in errors:
        log.warning("record failed: %s", e)
    manifest = Manifest(k, producer_labels(k, externals), records, len(errors), root=root)
    write_manifest(manifest, root / MANIFEST_NAME)
    return manifest


def load_sample(manifest: Manifest, record: SampleRecord):
    """``(x, mask)``: stacked maps ``(1, K, h, w)`` and float32 ``(h, w)`` mask."""
    maps = []
    for rel in record.maps:
        values = read_fmap(manifest.path(rel))
        if values.shape[0] != 1:
            raise FormatError(f"{rel}: expected 1 channel, found {values.shape[0]}")
        maps.append(values[0])
    mask = read_mask(manifest.path(record.mask)).astype(np.float32)
    return stack_maps(maps, manifest.k), mask
