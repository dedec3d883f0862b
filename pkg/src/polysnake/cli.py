"""Command-line entry points.

Subcommands: gen-data, train, eval, infer, sweep, viz. Run settings come
from defaults, then an optional flat key=value --config file, then explicit
flags, in increasing precedence. Every failure path prints a diagnostic to
stderr and exits nonzero; artifacts land under the --out directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import data as data_mod
from .config import RunConfig, config_from_mapping, parse_kv_text
from .evolution import export_trace
from .metrics import report_csv, report_table
from .training import SWEEP_AXES, evaluate, infer, load_run, sweep, train
from .viz import save_overlay

__all__ = ["main"]

# (flag, config key) pairs; values stay strings so the config layer does
# all conversion and validation uniformly for flags and files.
_CFG_FLAGS = [
    ("--k", "k", "polygon vertex count"),
    ("--iterations", "iterations", "evolution steps per image"),
    ("--lambda1", "lambda1", "balloon term weight"),
    ("--lambda2", "lambda2", "curvature term weight"),
    ("--lr", "lr", "Adam learning rate"),
    ("--batch", "batch", "mini-batch size"),
    ("--epochs", "epochs", "number of training epochs"),
    ("--tau", "tau", "soft rasterization temperature"),
    ("--seed", "seed", "run seed"),
    ("--diameter", "diameter", "initial circle diameter in pixels"),
    ("--threads", "threads", "BLAS thread cap; 1 gives deterministic runs"),
    ("--patience", "patience", "early stop after N stale epochs (0 = off)"),
    ("--base-channels", "unet.base_channels", "first encoder width"),
    ("--depth", "unet.depth", "number of encoder/decoder levels"),
    ("--dropout", "unet.dropout_p", "dropout probability after each conv"),
    ("--field-scale", "unet.field_scale", "displacement head output scale"),
    ("--head", "unet.head", "displacement head: linear or sigmoid"),
]


def _add_cfg_flags(p: argparse.ArgumentParser) -> None:
    for flag, key, helptext in _CFG_FLAGS:
        p.add_argument(flag, dest=key.replace(".", "__"), metavar="V",
                       default=None, help=helptext)
    p.add_argument("--config", metavar="FILE", default=None,
                   help="flat key=value config file; explicit flags override it")


def _build_config(args, data_dir: Optional[str] = None,
                  out_dir: Optional[str] = None) -> RunConfig:
    kv: Dict[str, str] = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        kv.update(parse_kv_text(path.read_text()))
    for _, key, _ in _CFG_FLAGS:
        value = getattr(args, key.replace(".", "__"))
        if value is not None:
            kv[key] = value
    if data_dir is not None:
        kv["data_dir"] = data_dir
    if out_dir is not None:
        kv["out_dir"] = out_dir
    return config_from_mapping(kv)


def _say(msg: str) -> None:
    print(msg, flush=True)


# -- subcommand handlers ---------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    spec = data_mod.SyntheticSpec(n=args.n, size=args.size,
                                  shape_family=args.family,
                                  noise_sigma=args.noise_sigma,
                                  texture=args.texture, seed=args.seed)
    if not 0.0 < args.train_frac < 1.0:
        raise ValueError(f"gen-data: --train-frac must be in (0,1), got {args.train_frac}")
    if not 0.0 <= args.val_frac < 1.0 - args.train_frac:
        raise ValueError(
            "gen-data: need 0 <= val_frac and train_frac + val_frac < 1, got "
            f"{args.train_frac} + {args.val_frac}")
    samples = data_mod.generate(spec)
    train_s, rest = data_mod.split(samples, args.train_frac, spec.seed)
    n_val = int(round(args.val_frac * len(samples)))
    if n_val <= 0 or not rest:
        val_s, test_s = [], rest
    elif n_val >= len(rest):
        val_s, test_s = rest, []
    else:
        val_s, test_s = data_mod.split(rest, n_val / len(rest), spec.seed + 1)
    splits = {s.id: "train" for s in train_s}
    splits.update({s.id: "val" for s in val_s})
    splits.update({s.id: "test" for s in test_s})
    data_mod.save_dataset(args.out, samples, splits)
    _say(f"wrote {len(samples)} samples to {args.out} "
         f"(train {len(train_s)}, val {len(val_s)}, test {len(test_s)})")
    return 0


def _cmd_train(args) -> int:
    cfg = _build_config(args, data_dir=args.data, out_dir=args.out)
    result = train(cfg, log=_say)
    if result.best_report:
        _say(f"best epoch {result.best_epoch}: miou {result.best_report.miou:.4f} "
             f"f1 {result.best_report.f1:.4f} boundf {result.best_report.boundf:.4f}")
    _say(f"artifacts in {cfg.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    cfg, net = load_run(args.run, args.checkpoint)
    if args.threads is not None:
        cfg = dataclasses.replace(cfg, threads=int(args.threads))
    samples = data_mod.load_dataset(args.data, args.split)
    if not samples:
        raise ValueError(f"eval: split {args.split!r} of {args.data} is empty")
    report, rows = evaluate(net, cfg, samples)
    out = Path(args.out if args.out else args.run)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_metrics.csv").write_text(report_csv(report))
    with open(out / "per_image.csv", "w") as fh:
        fh.write("id,f1,iou,boundf\n")
        for r in rows:
            fh.write(f"{r['id']},{r['f1']:.6f},{r['iou']:.6f},{r['boundf']:.6f}\n")
    _say(report_table(report))
    _say(f"wrote {out / 'eval_metrics.csv'} and {out / 'per_image.csv'}")
    return 0


def _cmd_infer(args) -> int:
    cfg, net = load_run(args.run, args.checkpoint)
    image = data_mod.load_png(args.image)
    if image.ndim != 3:
        raise ValueError(f"infer: {args.image} is not an RGB image")
    gt = data_mod.load_png(args.mask) if args.mask else None
    result = infer(net, cfg, image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_mod.save_png(out / "mask.png", result.mask)
    save_overlay(out / "overlay.png", image, initial=result.initial,
                 final=result.polygon, gt_mask=gt, scale=args.scale)
    with open(out / "polygon.csv", "w") as fh:
        fh.write("vertex_index,x,y\n")
        for j, (x, y) in enumerate(result.polygon):
            fh.write(f"{j},{x:.6f},{y:.6f}\n")
    export_trace(result.trace, out / "trace.csv")
    _say(f"final polygon has {len(result.polygon)} vertices, "
         f"mask covers {int(result.mask.sum())} px; artifacts in {out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _build_config(args, out_dir=args.out)
    rows = sweep(cfg, args.axis, train_n=args.train_n, val_n=args.val_n,
                 size=args.size, log=_say)
    _say(f"{'value':>12}  {'f1':>8}  {'miou':>8}  {'wcov':>8}  {'boundf':>8}")
    for r in rows:
        _say(f"{str(r['value']):>12}  {r['f1']:8.4f}  {r['miou']:8.4f}  "
             f"{r['wcov']:8.4f}  {r['boundf']:8.4f}")
    _say(f"wrote {Path(args.out) / ('sweep_' + args.axis + '.csv')}")
    return 0


def _cmd_viz(args) -> int:
    cfg, net = load_run(args.run, args.checkpoint)
    samples = data_mod.load_dataset(args.data, args.split)
    if args.ids:
        wanted = set(args.ids.split(","))
        samples = [s for s in samples if s.id in wanted]
        missing = wanted - {s.id for s in samples}
        if missing:
            raise ValueError(f"viz: ids not in split {args.split!r}: {sorted(missing)}")
    else:
        samples = samples[:args.limit]
    if not samples:
        raise ValueError(f"viz: no samples selected from split {args.split!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        result = infer(net, cfg, s.image)
        save_overlay(out / f"{s.id}_overlay.png", s.image, initial=result.initial,
                     final=result.polygon, gt_mask=s.mask, scale=args.scale)
        export_trace(result.trace, out / f"{s.id}_trace.csv")
    _say(f"wrote {len(samples)} overlay/trace pairs to {out}")
    return 0


# -- parser ----------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polysnake",
        description="Active-contour segmentation with a learned displacement field")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic PNG dataset")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--n", type=int, default=200, help="number of samples")
    p.add_argument("--size", type=int, default=64, help="square image size")
    p.add_argument("--family", default="mix", choices=data_mod.FAMILIES)
    p.add_argument("--texture", default="speckle", choices=data_mod.TEXTURES)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--val-frac", type=float, default=0.15,
                   help="validation fraction; the rest becomes the test split")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory (gen-data layout)")
    p.add_argument("--out", required=True, help="run directory for artifacts")
    _add_cfg_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a finished run on a dataset split")
    p.add_argument("--run", required=True, help="run directory from train")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", default="best", choices=("best", "last"))
    p.add_argument("--threads", default=None, help="override the run's thread cap")
    p.add_argument("--out", default=None, help="output directory (default: run dir)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="segment one image with a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--image", required=True, help="input RGB PNG")
    p.add_argument("--mask", default=None, help="optional ground-truth mask PNG")
    p.add_argument("--checkpoint", default="best", choices=("best", "last"))
    p.add_argument("--scale", type=int, default=4, help="overlay upscale factor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("sweep", help="sensitivity sweep on a synthetic benchmark")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--out", required=True)
    p.add_argument("--train-n", type=int, default=120)
    p.add_argument("--val-n", type=int, default=40)
    p.add_argument("--size", type=int, default=64,
                   help="image size for non-resolution axes")
    _add_cfg_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("viz", help="overlay PNGs for samples of a dataset split")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ids", default=None, help="comma-separated sample ids")
    p.add_argument("--limit", type=int, default=4,
                   help="number of samples when --ids is not given")
    p.add_argument("--checkpoint", default="best", choices=("best", "last"))
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_viz)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
