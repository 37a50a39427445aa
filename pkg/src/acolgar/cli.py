"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 runtime or NaN abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_overrides, config_from_dict, load_config
from .data import IdxError, convert_usps
from .layers import SpecError
from .tensor import ShapeError
from .trainer import CheckpointError, TrainingDiverged
from .transforms import TransformConfigError
from . import pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

log = logging.getLogger("acolgar")


def _config(args) -> RunConfig:
    if args.config is None:
        return config_from_dict(apply_overrides({}, args.set or []))
    return load_config(args.config, args.set)


def _out(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.output_dir)


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    _, tlog = pipeline.run_train(cfg, out)
    last = tlog[-1]
    print(f"trained {len(tlog)} epochs; final loss={last.loss:.4f} pseudo_acc={last.pseudo_acc:.3f}")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    pipeline.write_snapshot(cfg, out)
    ckpt = args.checkpoint or out / pipeline.CHECKPOINT_NAME
    rep = pipeline.run_evaluate(cfg, ckpt, out, k=args.k, tap=args.tap, split=args.split)
    print(f"ACC={rep.acc:.4f} (k={rep.k}, tap={args.tap or cfg.eval.tap})")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    pipeline.write_snapshot(cfg, out)
    ckpt = args.checkpoint or out / pipeline.CHECKPOINT_NAME
    d = pipeline.run_diagnose(cfg, ckpt, out, sample_m=args.sample_m, q=args.tau_percentile)
    lo, hi = cfg.n_p, cfg.n_p * cfg.gar.k_s
    inside = "inside" if lo <= d.delta_m <= hi else "outside"
    print(f"delta(G_Y)={d.delta_y} delta(G_M)={d.delta_m} ({inside} [{lo}, {hi}]); "
          f"G_M edges in G_Y: {d.spanning_fraction:.3f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    sets = [s.split(",") for s in args.sets] if args.sets else cfg.ablate.sets
    if not sets:
        raise ConfigError("ablate.sets: no transform sets given (use --sets or the config)")
    for s in sets:
        pipeline.with_transforms(cfg, s)  # validate every set before any training
    repeats = args.repeats or cfg.ablate.repeats
    rows, errors = pipeline.run_ablate(cfg, sets, repeats, out)
    for r in rows:
        print(f"{r['set']}: acc_mean={r['acc_mean']:.4f} acc_std={r['acc_std']:.4f}")
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    pipeline.write_snapshot(cfg, out)
    ckpt = args.checkpoint or out / pipeline.CHECKPOINT_NAME
    path = pipeline.run_export(cfg, ckpt, out, tap=args.tap, split=args.split, with_csv=args.csv)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_convert_usps(args) -> int:
    info = convert_usps(args.input, args.images, args.labels)
    print(json.dumps(info, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acolgar", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_ckpt=False):
        sp.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.epochs=5")
        sp.add_argument("--out", help="output directory (default: output_dir from the config)")
        if needs_ckpt:
            sp.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.bin)")

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="k-means clustering accuracy on a representation")
    common(sp, True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--tap", choices=("latent", "presoftmax", "softmax"))
    sp.add_argument("--split", choices=("train", "test"))
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("diagnose", help="activation graph component statistics")
    common(sp, True)
    sp.add_argument("--sample-m", type=int)
    sp.add_argument("--tau-percentile", type=float)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("ablate", help="compare transform sets")
    common(sp)
    sp.add_argument("--sets", nargs="+", metavar="NAMES", help="comma-separated transform sets, e.g. identity,rot180")
    sp.add_argument("--repeats", type=int)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("export-latent", help="write a representation matrix to disk")
    common(sp, True)
    sp.add_argument("--tap", choices=("latent", "presoftmax", "softmax"))
    sp.add_argument("--split", choices=("train", "test"))
    sp.add_argument("--csv", action="store_true", help="also write a CSV copy")
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("convert-usps", help="convert USPS LIBSVM text to IDX")
    sp.add_argument("input")
    sp.add_argument("images")
    sp.add_argument("labels")
    sp.set_defaults(func=cmd_convert_usps)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError, TransformConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxError, CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, ShapeError, FloatingPointError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
