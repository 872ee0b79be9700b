"""Command-line entry point: ``multibox-uq <subcommand> ...``."""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import MultiboxError


def _pmap_dir(path) -> list[str]:
    files = sorted(glob.glob(os.path.join(path, "*.pmap")))
    if not files:
        raise SystemExit(f"error: no .pmap files in {path}")
    return files


def _prediction_set(path):
    from .fusion import PredictionSet
    from .imaging import load_raster_f32

    return PredictionSet(tuple(load_raster_f32(f) for f in _pmap_dir(path)))


def _load_prob(path) -> np.ndarray:
    from .imaging import load_image, load_raster_f32, to_gray

    if path.lower().endswith(".pmap"):
        return load_raster_f32(path).astype(np.float64)
    return to_gray(load_image(path)).plane()


# --------------------------------------------------------------- subcommands

def cmd_degrade(args):
    from .degradation import DegradationParams, add_gaussian_noise, degrade
    from .imaging import load_image, save_image, save_pgm

    img = load_image(args.inp)
    if args.code is None:
        out = add_gaussian_noise(img, args.sigma, args.seed)
    else:
        out = degrade(img, args.code, DegradationParams(sigma_noise=args.sigma, seed=args.seed))
    (save_pgm if args.out.lower().endswith(".pgm") else save_image)(out, args.out)


def cmd_prompts(args):
    from .imaging import load_mask
    from .prompts import PromptConfig, gt_bounding_box, jitter_boxes, write_boxes_csv

    gt = load_mask(args.mask)
    h, w = gt.shape
    boxes = jitter_boxes(gt_bounding_box(gt), PromptConfig(args.m, args.jitter, args.seed), w, h)
    write_boxes_csv(boxes, args.out)


def cmd_fuse(args):
    from .fusion import fuse_mean
    from .imaging import save_raster_f32

    save_raster_f32(fuse_mean(_prediction_set(args.inp)), args.out)


def cmd_uncertainty(args):
    from .imaging import save_raster_f32
    from .uncertainty import uncertainty

    u = uncertainty(_prediction_set(args.inp), args.kind)
    save_raster_f32(u.values, args.out)
    if args.png:
        from .plotting import save_colormap_png

        save_colormap_png(u.values, args.png, cmap=args.colormap)
    print(f"{u.kind}: mean {u.mean:.6f}")


def cmd_score(args):
    from .imaging import load_mask
    from .metrics import evaluate

    report = evaluate(_load_prob(args.pred), load_mask(args.gt), threshold=args.threshold, n_bins=args.bins)
    text = json.dumps(report.as_dict(6), indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen_synth(args):
    from .synth import generate_dataset

    stems = generate_dataset(args.out, n=args.n, size=args.size, seed=args.seed)
    print(f"wrote {len(stems)} image/mask pairs to {args.out}")


def cmd_evaluate(args):
    from .harness import Degradation, config_from_mapping, load_config, run_experiment

    overrides = dict(
        dataset_dir=args.dataset,
        out_dir=args.out,
        seed=args.seed,
        workers=args.workers,
        m=args.m,
        jitter_ratio=args.jitter,
        backend_kind=args.backend,
        backend_command=args.backend_cmd,
        backend_label=args.backend_label,
    )
    if args.modes:
        overrides["modes"] = tuple(s.strip() for s in args.modes.split(","))
    if args.degradations:
        overrides["degradations"] = tuple(Degradation.parse(s) for s in args.degradations.split(","))
    if args.record_timing:
        overrides["record_timing"] = True
    if args.no_artifacts:
        overrides["artifacts"] = False
    if args.no_figures:
        overrides["figures"] = False
    if args.panels:
        overrides["panels"] = True
    if args.backend_cmd and args.backend is None:
        overrides["backend_kind"] = "external"
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        cfg = config_from_mapping({}, None, **overrides)
    res = run_experiment(cfg)
    for c in res.aggregate["cells"]:
        print(f"{c['degradation']:>16} {c['mode']:>10}  n={c['n']:<3d} dice={c['dice']:.4f} "
              f"ece={c['ece']:.4f} sm={c['sm']:.4f} wfm={c['wfm']:.4f}")
    for d in res.aggregate["deltas"]:
        shown = " ".join(f"{k}={v}" for k, v in d["display"].items())
        print(f"{d['degradation']:>16} {'d(' + d['mode'] + ')':>10}  {shown}")
    if res.failures:
        print(f"{len(res.failures)} failed run(s), see {os.path.join(cfg.out_dir, 'failed.csv')}")
    print(f"reports in {cfg.out_dir}")


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multibox-uq", description="Multi-box prompt fusion and uncertainty.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="write a degraded copy of an image")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--code", default=None, help="3-bit code (illumination, blur, noise); omit for noise only")
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("prompts", help="jittered box prompts from a gt mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("fuse", help="mean-fuse a directory of .pmap predictions")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("uncertainty", help="uncertainty map from a directory of .pmap predictions")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--kind", choices=("predictive", "expected", "variance"), default="predictive")
    p.add_argument("--out", required=True)
    p.add_argument("--colormap", default="viridis")
    p.add_argument("--png", default=None, help="also render the map to this PNG")
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("score", help="Dice, ECE, S-measure and weighted F-measure as JSON")
    p.add_argument("--pred", required=True, help=".pmap or 8-bit image")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None, help="JSON path (stdout if omitted)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gen-synth", help="generate a synthetic fundus-like dataset")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("evaluate", help="run the mode x degradation grid over a dataset")
    p.add_argument("--config", default=None, help="TOML run configuration")
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--modes", default=None, help="comma list of everything,box,multibox")
    p.add_argument("--degradations", default=None,
                   help="comma list, e.g. clean,gaussian:0.05,coded:101")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--backend", choices=("synthetic", "external"), default=None)
    p.add_argument("--backend-cmd", default=None, help="command line of an external backend process")
    p.add_argument("--backend-label", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--record-timing", action="store_true",
                   help="fill wall_time_s (runs.csv is then no longer reproducible byte for byte)")
    p.add_argument("--no-artifacts", action="store_true")
    p.add_argument("--no-figures", action="store_true", help="skip aggregate.png")
    p.add_argument("--panels", action="store_true",
                   help="also draw an input/fused/entropy panel per image and setting")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (MultiboxError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
