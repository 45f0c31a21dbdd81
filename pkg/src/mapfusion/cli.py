"""``mapfusion`` command line: synth, train, predict, eval, gradcheck."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import echo_config, load_config, owa_config, train_config
from .errors import (CheckpointError, ConfigError, ContractError, FormatError, InputError,
                     NumericError, SpecError)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_CHECKPOINT = range(6)


def _synth(args, cfg):
    from .data import build_dataset
    out = Path(args.out)
    echo_config(cfg, out, "synth")
    m = build_dataset(out, cfg["synth.train"], cfg["synth.val"], cfg["synth.test"], cfg["synth.k"],
                      cfg["seed"], cfg["synth.size"], cfg["jobs"], args.external_maps)
    counts = m.split_counts
    print(f"train {counts['train']}  val {counts['val']}  test {counts['test']}  failed {m.failed}")
    return EXIT_OK


def _train(args, cfg):
    from .data import load_manifest
    from .model import init_model
    from .training import train
    manifest = load_manifest(args.manifest)
    model_cfg = owa_config(cfg)
    if model_cfg.in_channels != manifest.k:
        raise ConfigError(f"k={model_cfg.in_channels} does not match manifest k={manifest.k}")
    tcfg = train_config(cfg)
    echo_config(cfg, args.out, "train")
    t0 = time.time()

    def progress(e):
        print(f"epoch {e['epoch']:3d}  train {e['train_loss']:.6f}  val {e['val_loss']:.6f}  "
              f"lr {e['lr']:g}  [{time.time() - t0:.0f}s]", flush=True)

    best, history = train(init_model(model_cfg), manifest, tcfg, args.out, progress=progress)
    if history.best_epoch is None:
        print(f"no epochs run; initial model saved to {best}")
    else:
        print(f"best val loss {history.best_val_loss:.6f} at epoch {history.best_epoch}; saved {best}")
    return EXIT_OK


def _predict(args, cfg):
    from .model import forward, load_checkpoint
    from .producers import (builtin_maps, load_external_map, read_rgb, stack_maps, write_fmap,
                            write_gray_png)
    model = load_checkpoint(args.model)
    rgb = read_rgb(args.image)
    h, w = rgb.shape[:2]
    maps = builtin_maps(rgb)
    if args.maps:
        stem = Path(args.image).stem
        for p in sorted(Path(args.maps).glob(f"{stem}.*.fmap")):
            name = p.name[len(stem) + 1:-len(".fmap")]
            maps.append(load_external_map(p, h, w, name))
    k = model.config.in_channels
    fused = forward(model, stack_maps(maps[:k], k))[0, 0]
    out = Path(args.out)
    echo_config(cfg, out.parent, "predict")
    write_fmap(out, fused)
    if args.png:
        write_gray_png(args.png, fused)
    print(f"wrote {out} ({w}x{h}), mean {float(np.mean(fused)):.6f}")
    return EXIT_OK


def _eval(args, cfg):
    from .data import load_manifest
    from .evaluation import evaluate_all, write_report
    from .model import load_checkpoint
    manifest = load_manifest(args.manifest)
    model = load_checkpoint(args.model) if args.model else None
    if model is None and not args.individuals:
        raise ConfigError("eval needs --model and/or --individuals")
    report = evaluate_all(manifest, args.split, model, args.individuals, cfg["jobs"], cfg["eval.threshold"])
    echo_config(cfg, args.out, "eval")
    write_report(report, Path(args.out) / "report.csv")
    return EXIT_OK


def _gradcheck(args, cfg):
    from .checks import gradcheck_suite
    t0 = time.time()
    reports = gradcheck_suite(cfg["seed"])
    for r in reports:
        print(r.line())
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed in {time.time() - t0:.1f}s")
    for r in failed:
        print(f"failing: {r.op} max_rel_err={r.max_rel_error:.3e}")
    return EXIT_CHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mapfusion", description="Fusion of tampering localization maps.")
    p.add_argument("--config", help="JSON file of flat dotted keys, e.g. {\"train.epochs\": 5}")
    p.add_argument("--seed", type=int, help="seed for synthesis, initialization and shuffling")
    p.add_argument("--jobs", type=int, help="worker processes for per-image work (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic forgery corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--train", type=int, dest="synth.train")
    s.add_argument("--val", type=int, dest="synth.val")
    s.add_argument("--test", type=int, dest="synth.test")
    s.add_argument("--k", type=int, dest="synth.k")
    s.add_argument("--size", type=int, dest="synth.size")
    s.add_argument("--external-maps", help="directory of <id>.<name>.fmap files to bind")
    s.set_defaults(func=_synth)

    t = sub.add_parser("train", help="train the fusion network")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--k", type=int, dest="model.in_channels")
    t.add_argument("--feature-width", type=int, dest="model.feature_width")
    t.add_argument("--layers", type=int, dest="model.num_layers")
    t.add_argument("--attention-hidden", type=int, dest="model.attention_hidden")
    t.add_argument("--no-residual", action="store_const", const=False, dest="model.residual")
    t.add_argument("--lr", type=float, dest="train.lr0")
    t.add_argument("--batch", type=int, dest="train.batch")
    t.add_argument("--epochs", type=int, dest="train.epochs")
    t.add_argument("--patience", type=int, dest="train.plateau_patience")
    t.add_argument("--lr-factor", type=float, dest="train.lr_factor")
    t.add_argument("--val-subset", type=int, dest="train.val_subset")
    t.add_argument("--no-shuffle", action="store_const", const=False, dest="train.shuffle")
    t.set_defaults(func=_train)

    r = sub.add_parser("predict", help="fused map for one image")
    r.add_argument("--model", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--maps", help="directory with external <stem>.<name>.fmap maps")
    r.add_argument("--out", required=True, help="output .fmap path")
    r.add_argument("--png", help="optional grayscale PNG rendering")
    r.set_defaults(func=_predict)

    e = sub.add_parser("eval", help="F1/IoU report over a manifest split")
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--model")
    e.add_argument("--individuals", action="store_true", help="also score each producer channel")
    e.add_argument("--threshold", type=float, dest="eval.threshold")
    e.add_argument("--out", default=".", help="directory for report.csv")
    e.set_defaults(func=_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.set_defaults(func=_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    overrides["seed"] = args.seed
    overrides["jobs"] = args.jobs
    try:
        cfg = load_config(args.config, overrides)
        if cfg["jobs"] < 1:
            raise ConfigError(f"jobs must be positive, got {cfg['jobs']}")
        return args.func(args, cfg)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ConfigError, SpecError, ContractError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
