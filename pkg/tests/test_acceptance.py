"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary).

Criterion 5 trains on the full 600/50/50 corpus and takes about half an hour
on a single core. Set MAPFUSION_SKIP_E2E=1 to skip it.
"""
import csv
import json
import os
import time

import numpy as np
import pytest

from mapfusion.checks import gradcheck_suite
from mapfusion.cli import main
from mapfusion.data import (build_dataset, gen_base_image, load_manifest, load_sample, make_forgery,
                            random_spec, write_manifest)
from mapfusion.errors import BadMagicError, FormatError, PayloadError
from mapfusion.evaluation import f1_scores, iou, pixel_auc
from mapfusion.model import OwaConfig, forward, init_model, load_checkpoint, save_checkpoint
from mapfusion.producers import adq1_map, blk_map, noise_residual_map, read_fmap, write_fmap
from mapfusion.training import TrainConfig, dataset_loss, train

# the end-to-end run uses a narrower network than the library default; see README
E2E_FEATURE_WIDTH = 8
E2E_BUDGET_S = 30 * 60


def test_criterion_1_gradient_suite(report_criterion):
    t0 = time.process_time()
    reports = gradcheck_suite(0)
    cpu = time.process_time() - t0
    names = {r.op for r in reports}
    required = {"conv1", "conv3", "conv5", "conv7", "avgpool3", "maxpool3", "sigmoid", "relu", "softmax",
                "dense", "concat", "bce", "model_depth2_F4"}
    ok = required <= names and all(r.passed for r in reports) and cpu < 60
    worst = max(r.max_rel_error for r in reports if r.op != "model_depth2_F4")
    model = next(r for r in reports if r.op == "model_depth2_F4")
    assert report_criterion(1, ok, f"{len(reports)} checks, primitives max rel err {worst:.2e} (tol 1e-3), "
                                   f"model {model.max_rel_error:.2e} (tol 1e-2), {cpu:.1f}s CPU (< 60)")


def _brute(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(pred.flat, gt.flat):
        tp += p and g
        fp += p and not g
        fn += g and not p
        tn += not p and not g
    f1t = 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    f1p = 1.0 if tn + fp + fn == 0 else 2 * tn / (2 * tn + fp + fn)
    return (f1t + f1p) / 2, f1t, (1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn))


def test_criterion_2_metric_oracle(report_criterion):
    rng = np.random.default_rng(2024)
    mismatches, both_empty = 0, 0
    for i in range(1000):
        if i % 10 == 0:
            pred = np.zeros((8, 8), bool)
            gt = np.zeros((8, 8), bool)
        else:
            pred = rng.random((8, 8)) < rng.random()
            gt = rng.random((8, 8)) < rng.random() * 0.6
        both_empty += not pred.any() and not gt.any()
        got = (*f1_scores(pred, gt), iou(pred, gt))
        mismatches += got != _brute(pred, gt)
    assert report_criterion(2, mismatches == 0 and both_empty >= 100,
                            f"{mismatches} mismatches over 1000 pairs ({both_empty} both-empty)")


def test_criterion_3_architecture_invariants(report_criterion):
    rng = np.random.default_rng(3)
    sizes = [(16, 16), (24, 40), (32, 32), (48, 64), (64, 48), (80, 80), (96, 128), (128, 96)]
    worst_sum, bad = 0.0, 0
    for i in range(100):
        h, w = sizes[i % len(sizes)]
        model = init_model(OwaConfig(seed=i))
        x = rng.random((1, 5, h, w)).astype(np.float32)
        out, att = forward(model, x, return_attention=True)
        worst_sum = max(worst_sum, max(float(np.abs(a.sum(axis=1) - 1).max()) for a in att))
        bad += out.shape != (1, 1, h, w) or not np.all((out > 0) & (out < 1))
    zero = init_model(OwaConfig(seed=0))
    zero.params["head.kernel"][:] = 0
    zero.params["head.bias"][:] = 0
    exact = bool(np.all(forward(zero, rng.random((2, 5, 40, 24)).astype(np.float32)) == 0.5))
    ok = worst_sum <= 1e-5 and bad == 0 and exact
    assert report_criterion(3, ok, f"100 passes, max |sum(att)-1| {worst_sum:.1e}, {bad} shape/range "
                                   f"violations, zeroed head exact 0.5: {exact}")


def _grid_case(seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:128, 0:128]
    base = 100 + 40 * np.sin(xx / 17 + rng.uniform(0, 6)) * np.cos(yy / 23) + rng.normal(0, 1, (128, 128))
    img = base + np.kron(rng.uniform(-12, 12, (16, 16)), np.ones((8, 8)))
    t, l = rng.integers(8, 64, 2)
    ph, pw = rng.integers(32, 56, 2)
    mask = np.zeros((128, 128), bool)
    mask[t:t + ph, l:l + pw] = True
    img[mask] = base[mask]
    return np.clip(img, 0, 255), mask


def _noise_case(seed):
    rng = np.random.default_rng(seed)
    img = 128 + rng.normal(0, 2, (128, 128))
    t, l = rng.integers(8, 64, 2)
    ph, pw = rng.integers(24, 56, 2)
    mask = np.zeros((128, 128), bool)
    mask[t:t + ph, l:l + pw] = True
    img[mask] = 128 + rng.normal(0, 10, int(mask.sum()))
    return img, mask


def test_criterion_4_producer_signal(report_criterion):
    aucs = []
    for s in range(20):
        spec = random_spec(np.random.default_rng(1000 + s), 128, 128, "splicing", 70, 90)
        img, mask = make_forgery(gen_base_image(2 * s), gen_base_image(2 * s + 1), spec)
        aucs.append(pixel_auc(adq1_map(img), mask > 0))
    blk_wins = noise_wins = 0
    for s in range(20):
        img, mask = _grid_case(s)
        m = blk_map(img)
        blk_wins += m[mask].mean() > m[~mask].mean()
        img, mask = _noise_case(s)
        m = noise_residual_map(img)
        noise_wins += m[mask].mean() > m[~mask].mean()
    ok = np.mean(aucs) > 0.7 and blk_wins >= 16 and noise_wins >= 16
    assert report_criterion(4, ok, f"adq1 mean AUC {np.mean(aucs):.3f} (> 0.7), blk {blk_wins}/20, "
                                   f"noise {noise_wins}/20 (>= 16)")


def test_criterion_6_training_mechanics(report_criterion, tmp_path):
    # one-sample corpus; the val record shares the train sample's files
    m = build_dataset(tmp_path / "one", 1, 1, 1, k=5, seed=3, size=64)
    train_rec = m.split("train")[0]
    for r in m.records:
        if r.split == "val":
            r.image, r.mask, r.maps = train_rec.image, train_rec.mask, list(train_rec.maps)
    write_manifest(m, tmp_path / "one/manifest.json")
    _, hist = train(init_model(OwaConfig(seed=0)), m, TrainConfig(epochs=200, seed=0), tmp_path / "ovf")
    final = hist.epochs[-1]["train_loss"]
    best_train = min(e["train_loss"] for e in hist.epochs)

    small = build_dataset(tmp_path / "small", 4, 2, 1, k=5, seed=4, size=64)
    cfg = OwaConfig(feature_width=3, num_layers=1, attention_hidden=4, seed=1)
    best, plateau = train(init_model(cfg), small, TrainConfig(epochs=13, lr0=1e-12, seed=1), tmp_path / "pl")
    lrs = plateau.lrs
    ratios = [b / a for a, b in zip(lrs, lrs[1:]) if b != a]
    drops = [i for i in range(1, len(lrs)) if lrs[i] != lrs[i - 1]]
    schedule_ok = (all(b <= a for a, b in zip(lrs, lrs[1:])) and drops == [6, 11]
                   and all(abs(r - 0.1) < 1e-12 for r in ratios))
    val = [load_sample(small, r) for r in small.split("val")]
    reloaded = dataset_loss(load_checkpoint(best), val, 4)
    best_ok = reloaded == min(e["val_loss"] for e in plateau.epochs) == plateau.best_val_loss

    _, hist2 = train(init_model(cfg), small, TrainConfig(epochs=4, seed=2), tmp_path / "real")
    min_ok = hist2.best_val_loss == min(e["val_loss"] for e in hist2.epochs)
    ok = best_train < 0.05 and schedule_ok and best_ok and min_ok
    assert report_criterion(6, ok, f"overfit BCE final {final:.4f} / best {best_train:.4f} in 200 steps "
                                   f"(< 0.05); lr drops at epochs {drops} by x0.1: {schedule_ok}; "
                                   f"best checkpoint val == min history: {best_ok and min_ok}")


def test_criterion_7_persistence(report_criterion, tmp_path):
    model = init_model(OwaConfig(seed=5))
    path = save_checkpoint(model, tmp_path / "m.owaf")
    x = np.random.default_rng(0).random((1, 5, 24, 24)).astype(np.float32)
    owaf_ok = forward(load_checkpoint(path), x).tobytes() == forward(model, x).tobytes()

    values = np.random.default_rng(1).random((1, 9, 11)).astype(np.float32)
    f1 = write_fmap(tmp_path / "a.fmap", values)
    f2 = write_fmap(tmp_path / "b.fmap", read_fmap(f1))
    fmap_ok = f1.read_bytes() == f2.read_bytes()

    corpus = build_dataset(tmp_path / "c", 2, 1, 1, k=5, seed=6, size=64)
    m1 = (tmp_path / "c/manifest.json").read_bytes()
    write_manifest(load_manifest(tmp_path / "c/manifest.json"), tmp_path / "c/manifest.json")
    manifest_ok = (tmp_path / "c/manifest.json").read_bytes() == m1 and len(corpus.records) == 4

    raw = path.read_bytes()
    errors = []
    for blob, exc in ((b"OWAF2\n" + raw[6:], BadMagicError), (raw[:len(raw) // 2], PayloadError),
                      (raw[:-1], PayloadError)):
        bad = tmp_path / "bad.owaf"
        bad.write_bytes(blob)
        try:
            load_checkpoint(bad)
            errors.append("loaded")
        except exc:
            pass
    bad = tmp_path / "bad.fmap"
    bad.write_bytes(b"XMAP1\n" + f1.read_bytes()[6:])
    try:
        read_fmap(bad)
        errors.append("fmap loaded")
    except FormatError:
        pass
    bad.write_bytes(f1.read_bytes()[:-3])
    try:
        read_fmap(bad)
        errors.append("truncated fmap loaded")
    except FormatError:
        pass
    ok = owaf_ok and fmap_ok and manifest_ok and not errors
    assert report_criterion(7, ok, f"OWAF1 forward bit-identical {owaf_ok}, FMAP bytes {fmap_ok}, "
                                   f"manifest bytes {manifest_ok}, corrupt inputs rejected {not errors}")


def _pipeline(root, jobs):
    common = ["--seed", "8", "--jobs", str(jobs)]
    assert main(common + ["synth", "--out", str(root / "d"), "--train", "12", "--val", "4", "--test", "6",
                          "--size", "64"]) == 0
    assert main(common + ["train", "--manifest", str(root / "d/manifest.json"), "--out", str(root / "t"),
                          "--epochs", "2", "--feature-width", "4", "--layers", "2"]) == 0
    assert main(common + ["eval", "--manifest", str(root / "d/manifest.json"), "--individuals",
                          "--model", str(root / "t/best.owaf"), "--out", str(root / "e")]) == 0
    return (root / "t/best.owaf").read_bytes(), (root / "e/report.csv").read_bytes()


def test_criterion_8_determinism(report_criterion, tmp_path):
    a = _pipeline(tmp_path / "a", 1)
    b = _pipeline(tmp_path / "b", 1)
    c = _pipeline(tmp_path / "c", 4)
    ok = a == b and a[1] == c[1]
    assert report_criterion(8, ok, f"jobs 1 twice: checkpoint identical {a[0] == b[0]}, CSV identical "
                                   f"{a[1] == b[1]}; jobs 4 CSV identical {a[1] == c[1]}")


@pytest.mark.skipif(os.environ.get("MAPFUSION_SKIP_E2E") == "1", reason="MAPFUSION_SKIP_E2E=1")
def test_criterion_5_end_to_end_ordering(report_criterion, tmp_path):
    t0 = time.time()
    data, run, ev = tmp_path / "data", tmp_path / "run", tmp_path / "eval"
    assert main(["--seed", "1", "synth", "--out", str(data)]) == 0
    assert main(["--seed", "1", "train", "--manifest", str(data / "manifest.json"), "--out", str(run),
                 "--feature-width", str(E2E_FEATURE_WIDTH)]) == 0
    assert main(["--seed", "1", "eval", "--manifest", str(data / "manifest.json"), "--individuals",
                 "--model", str(run / "best.owaf"), "--out", str(ev)]) == 0
    wall = time.time() - t0
    with open(ev / "report.csv") as fh:
        rows = {r["method"]: r for r in csv.DictReader(fh)}
    fused = rows.pop("fusion")
    best_f1 = max(float(r["macro_f1"]) for r in rows.values())
    best_iou = max(float(r["iou"]) for r in rows.values())
    f1_ok = float(fused["macro_f1"]) >= best_f1 + 0.05
    iou_ok = float(fused["iou"]) > best_iou
    budget_ok = wall < E2E_BUDGET_S
    history = [json.loads(l) for l in (run / "history.jsonl").read_text().splitlines()]
    assert report_criterion(
        5, f1_ok and iou_ok and budget_ok,
        f"fused macro-F1 {float(fused['macro_f1']):.4f} vs best individual {best_f1:.4f} (+0.05 needed), "
        f"fused IoU {float(fused['iou']):.4f} vs best {best_iou:.4f}; {len(history)} epochs, "
        f"wall {wall / 60:.1f} min on {os.cpu_count()} core(s) (budget 30 min, F={E2E_FEATURE_WIDTH})")
