"""Command-line entry point: ``rigmap {simulate,run,eval,ablate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as rio
from .config import ABLATIONS, RunConfig, load_config, to_ini
from .metrics import ate, ate_ratio, cloud_metrics, scale_drift_windows
from .pipeline import PipelineError, run_pipeline


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.sync is not None:
        cfg = cfg.with_sync(args.sync)
    for name in args.ablate or ():
        cfg = cfg.with_ablation(name)
    out = args.out if args.out is not None else cfg.run.out
    return replace(cfg, run=replace(cfg.run, out=out))


def _print_report(report, stream=sys.stdout):
    for k, v in report.rows():
        stream.write(f"{k:>18s}  {v:.6g}\n" if isinstance(v, float) else f"{k:>18s}  {v}\n")


def cmd_simulate(args) -> int:
    from .simulator import generate_world

    cfg = _config(args)
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        world = generate_world(cfg.world)
    except Exception as exc:
        print(f"error: stage 'simulate' failed: {exc}", file=sys.stderr)
        return 2
    json_path, _ = rio.save_world(world, out / "world")
    rio.write_trajectory(world.primary, out / "truth_primary.tum")
    rio.write_trajectory(world.assistant, out / "truth_assistant.tum")
    (out / "config.ini").write_text(to_ini(cfg))
    print(f"{world.n_frames} frames, {len(world.landmarks)} landmarks -> {json_path}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    world = None
    if args.world:
        world = rio.load_world(args.world)
        cfg = replace(cfg, world=world.config)
    try:
        result = run_pipeline(cfg, cfg.run.out, world=world)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_report(result.report)
    return 0


def cmd_eval(args) -> int:
    est = rio.read_trajectory(args.estimate)
    gt = rio.read_trajectory(args.truth)
    if len(est) != len(gt):
        # associate by timestamp
        gt_t = np.array([p.timestamp for p in gt])
        pairs = [(e, gt[int(np.argmin(np.abs(gt_t - e.timestamp)))]) for e in est]
        est, gt = [p[0] for p in pairs], [p[1] for p in pairs]
    pe = np.stack([p.translation for p in est])
    pg = np.stack([p.translation for p in gt])
    a = ate(pe, pg, args.alignment)
    rows = [("alignment", args.alignment), ("ate", a), ("ate_ratio_percent", ate_ratio(a, pg))]
    if len(pe) >= args.window:
        sd = scale_drift_windows(pe, pg, args.window, args.stride)
        rows += [("scale_mean", sd.mean), ("scale_std", sd.std)]
    if args.cloud and args.truth_cloud:
        cm = cloud_metrics(rio.read_point_cloud(args.cloud)[0], rio.read_point_cloud(args.truth_cloud)[0])
        rows += [("accuracy", cm.accuracy), ("completeness", cm.completeness), ("chamfer", cm.chamfer)]
    for k, v in rows:
        print(f"{k:>18s}  {v:.6g}" if isinstance(v, float) else f"{k:>18s}  {v}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        rio.write_csv(Path(args.out) / "eval.csv", ["metric", "value"], rows)
    return 0


def cmd_ablate(args) -> int:
    base = _config(replace(args, ablate=None))
    variants = args.ablate or list(ABLATIONS)
    out = Path(base.run.out)
    rows = []
    for name in ["full"] + list(variants):
        cfg = base if name == "full" else base.with_ablation(name)
        label = "Full" if name == "full" else ABLATIONS[name]
        try:
            r = run_pipeline(cfg, out / name).report
        except PipelineError as exc:
            print(f"error: [{name}] {exc}", file=sys.stderr)
            return 2
        rows.append((label, r.ate, r.ate_ratio, r.scale_std, r.chamfer))
        print(f"{label:<26s} ate={r.ate:.4g} ratio={r.ate_ratio:.4g}% chamfer={r.chamfer:.4g}")
    rio.write_csv(out / "ablation.csv", ["variant", "ate", "ate_ratio_percent", "scale_std", "chamfer"], rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), metavar="NAME",
                        help=f"disable a module (repeatable): {', '.join(ABLATIONS)}")
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--sync", dest="sync", action="store_true", default=None,
                      help="assistant frames share primary timestamps")
    mode.add_argument("--async", dest="sync", action="store_false",
                      help="assistant timestamps offset by half a frame period")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rigmap", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate and save a synthetic world")
    r = sub.add_parser("run", parents=[common], help="run the full pipeline")
    r.add_argument("--world", help="replay a saved world file (.json)")
    e = sub.add_parser("eval", parents=[common], help="score a TUM trajectory against ground truth")
    e.add_argument("estimate")
    e.add_argument("truth")
    e.add_argument("--alignment", choices=("se3", "sim3"), default="sim3")
    e.add_argument("--window", type=int, default=100)
    e.add_argument("--stride", type=int, default=5)
    e.add_argument("--cloud")
    e.add_argument("--truth-cloud")
    sub.add_parser("ablate", parents=[common], help="run the full system and each ablation")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"simulate": cmd_simulate, "run": cmd_run, "eval": cmd_eval, "ablate": cmd_ablate}
    try:
        return handlers[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
