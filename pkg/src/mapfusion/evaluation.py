"""Binarization, F1/IoU metrics and dataset-level evaluation reports."""
from __future__ import annotations

import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import Manifest, load_sample
from .errors import ConfigError, ContractError, FormatError, InputError
from .model import OwaModel, forward
from .producers import FILL_VALUE, read_fmap, read_mask

THRESHOLD = 0.5
FUSION_LABEL = "fusion"
CSV_COLUMNS = ("method", "macro_f1", "f1_tampered", "iou", "n_images")


def binarize(values, threshold: float = THRESHOLD) -> np.ndarray:
    """``value >= threshold`` counts as tampered."""
    return np.asarray(values) >= threshold


def _counts(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, fp, fn, pred.size - tp - fp - fn


def _f1(tp, fp, fn):
    den = 2 * tp + fp + fn
    return 1.0 if den == 0 else 2 * tp / den


def f1_scores(pred, gt):
    """``(macro_f1, f1_tampered)``; a class absent from both masks scores 1."""
    tp, fp, fn, tn = _counts(pred, gt)
    tampered = _f1(tp, fp, fn)
    pristine = _f1(tn, fn, fp)
    return (tampered + pristine) / 2, tampered


def iou(pred, gt) -> float:
    tp, fp, fn, _ = _counts(pred, gt)
    den = tp + fp + fn
    return 1.0 if den == 0 else tp / den


@dataclass
class Metrics:
    macro_f1: float
    f1_tampered: float
    iou: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


def image_metrics(pred, gt) -> Metrics:
    tp, fp, fn, tn = _counts(pred, gt)
    macro, tam = f1_scores(pred, gt)
    return Metrics(macro, tam, iou(pred, gt), tp, fp, fn, tn)


@dataclass
class EvalRow:
    method: str
    macro_f1: float
    f1_tampered: float
    iou: float
    n_images: int
    skipped: int = 0


@dataclass
class EvalReport:
    rows: list
    dataset: str = ""
    threshold: float = THRESHOLD
    notes: list = field(default_factory=list)

    def sorted_rows(self):
        producers = sorted((r for r in self.rows if not r.method.startswith(FUSION_LABEL)),
                           key=lambda r: r.method)
        fusion = [r for r in self.rows if r.method.startswith(FUSION_LABEL)]
        return producers + fusion


def pixel_auc(scores, labels) -> float:
    """Probability that a random tampered pixel outranks a random pristine one."""
    labels = np.asarray(labels, dtype=bool).ravel()
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ContractError("AUC needs both classes present")
    ranks = rankdata(np.asarray(scores, dtype=np.float64).ravel())
    return float((ranks[labels].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


# --------------------------------------------------------------------------
# dataset evaluation
# --------------------------------------------------------------------------

def _producer_map(manifest: Manifest, record, channel: int):
    if channel < len(record.maps):
        values = read_fmap(manifest.path(record.maps[channel]))
        return values[0]
    gt = read_mask(manifest.path(record.mask))
    return np.full(gt.shape, FILL_VALUE, dtype=np.float32)


def _eval_one(args):
    manifest, record, source, model, threshold = args
    try:
        gt = read_mask(manifest.path(record.mask))
        if source == FUSION_LABEL:
            x, _ = load_sample(manifest, record)
            values = forward(model, x)[0, 0]
        else:
            values = _producer_map(manifest, record, manifest.producers.index(source))
    except (OSError, InputError, FormatError):
        return None
    m = image_metrics(binarize(values, threshold), gt)
    return m.macro_f1, m.f1_tampered, m.iou


def evaluate(source: str, manifest: Manifest, split: str = "test", model: OwaModel | None = None,
             threshold: float = THRESHOLD, jobs: int = 1, label: str | None = None) -> EvalRow:
    """Unweighted per-image mean metrics of one map source over a split.

    ``source`` is ``"fusion"`` (requires ``model``) or a producer label from
    the manifest. Images whose maps cannot be read are skipped and counted.
    """
    records = manifest.split(split)
    if not records:
        raise ConfigError(f"split {split!r} is empty")
    if source == FUSION_LABEL:
        if model is None:
            raise ConfigError("fusion evaluation needs a model")
        if model.config.in_channels != manifest.k:
            raise ConfigError(f"model k={model.config.in_channels} does not match manifest k={manifest.k}")
    elif source not in manifest.producers:
        raise ConfigError(f"unknown map source {source!r}; manifest has {manifest.producers}")
    tasks = [(manifest, r, source, model, threshold) for r in records]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_one, tasks, chunksize=4))
    else:
        results = [_eval_one(t) for t in tasks]
    ok = [r for r in results if r is not None]
    if not ok:
        raise InputError(f"no readable samples in split {split!r}")
    # sequential sum in record order: identical for any job count
    sums = [0.0, 0.0, 0.0]
    for r in ok:
        for i in range(3):
            sums[i] += r[i]
    n = len(ok)
    return EvalRow(label or source, sums[0] / n, sums[1] / n, sums[2] / n, n, len(results) - n)


def evaluate_all(manifest: Manifest, split: str = "test", model: OwaModel | None = None,
                 individuals: bool = True, jobs: int = 1, threshold: float = THRESHOLD) -> EvalReport:
    rows = []
    if individuals:
        rows += [evaluate(p, manifest, split, threshold=threshold, jobs=jobs) for p in manifest.producers]
    if model is not None:
        rows.append(evaluate(FUSION_LABEL, manifest, split, model, threshold, jobs))
    if not rows:
        raise ConfigError("nothing to evaluate: pass a model or ask for individual producers")
    report = EvalReport(rows, dataset=f"{manifest.root}:{split}", threshold=threshold)
    report.rows = report.sorted_rows()
    return report


def format_table(report: EvalReport) -> str:
    lines = [f"dataset {report.dataset}  threshold {report.threshold}",
             f"{'method':<16}{'macro_f1':>10}{'f1_tamp':>10}{'iou':>10}{'images':>8}"]
    for r in report.sorted_rows():
        lines.append(f"{r.method:<16}{r.macro_f1:>10.4f}{r.f1_tampered:>10.4f}{r.iou:>10.4f}{r.n_images:>8d}")
    return "\n".join(lines)


def write_report(report: EvalReport, path, stream="stdout") -> Path:
    """CSV with fixed 6-decimal formatting; also prints a table to ``stream``
    (standard output by default, nothing if ``None``)."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in report.sorted_rows():
                w.writerow([r.method, f"{r.macro_f1:.6f}", f"{r.f1_tampered:.6f}", f"{r.iou:.6f}", r.n_images])
    except OSError as exc:
        raise InputError(f"cannot write report {path}: {exc}") from None
    if stream is not None:
        print(format_table(report), file=sys.stdout if stream == "stdout" else stream)
    return path


def read_report(path) -> list:
    with open(path, newline="") as fh:
        return [EvalRow(r["method"], float(r["macro_f1"]), float(r["f1_tampered"]), float(r["iou"]),
                        int(r["n_images"])) for r in csv.DictReader(fh)]
