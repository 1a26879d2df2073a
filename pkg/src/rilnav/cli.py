"""Command line front end.

Subcommands cover the pipeline stages: map generation, demo generation,
behavior cloning, RL training, checkpoint evaluation and metric summaries.
Every failure path exits nonzero with a single ``error: <reason>`` line on
stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import ExperimentConfig, dump_config, load_config
from .demos import generate_demoset, save_demoset
from .errors import RilnavError
from .harness import evaluate, export_trajectories, load_grids, run_training
from .mapgen import KINDS, generate
from .worldsim import save_map


def _load_cfg(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_map(args) -> int:
    grid = generate(
        args.kind,
        width_m=args.width,
        height_m=args.height,
        resolution=args.resolution,
        seed=args.seed,
        name=args.name,
    )
    save_map(grid, args.out)
    print(f"wrote {args.out} ({grid.width}x{grid.height} cells at {grid.resolution} m)")
    return 0


def cmd_gen_demos(args) -> int:
    cfg = _load_cfg(args)
    grids = load_grids(args.maps or cfg.il_maps or cfg.rl_maps)
    demoset = generate_demoset(
        grids,
        args.count if args.count is not None else cfg.demo_count,
        seed=cfg.seed,
        cfg=cfg.sim,
        gains=cfg.demos.gains(),
        clearance_margin=cfg.demos.clearance_margin,
        min_separation=cfg.demos.min_separation,
        step_cap=cfg.demos.step_cap,
        retry_factor=cfg.demos.retry_factor,
    )
    paths = save_demoset(demoset, args.out)
    print(
        f"wrote {len(paths)} demo file(s) to {args.out}: "
        f"{len(demoset.demos)} demos, {demoset.total_steps} steps"
    )
    return 0


def cmd_train_il(args) -> int:
    cfg = _load_cfg(args)
    cfg = dataclasses.replace(cfg, rl_iterations=0)
    result = run_training(cfg, out_dir=args.out, demo_files=args.demos or None)
    rep = result.il_report
    if rep is not None and rep.val_losses:
        print(f"val loss {rep.val_losses[0]:.5f} -> {rep.val_losses[-1]:.5f}")
    print(f"wrote {result.checkpoint_path}")
    return 0


def cmd_train_rl(args) -> int:
    cfg = _load_cfg(args)
    if args.iterations is not None:
        cfg = dataclasses.replace(cfg, rl_iterations=args.iterations)

    def progress(rep):
        print(
            f"iter {rep.iteration:4d}  return {rep.mean_return:8.3f}  "
            f"success {rep.success_rate:5.2f}  crash {rep.crash_rate:5.2f}  "
            f"jc {rep.jc:6.3f}  kl {rep.kl:.5f}  case {rep.optim_case}",
            flush=True,
        )

    result = run_training(cfg, out_dir=args.out, demo_files=args.demos or None,
                          progress=progress if not args.quiet else None)
    print(f"wrote {result.checkpoint_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    grids = load_grids(args.maps or cfg.eval_maps or cfg.rl_maps)
    trials = args.trials if args.trials is not None else cfg.eval_trials
    evalset = evaluate(args.checkpoint, grids, trials, cfg.seed, cfg)
    agg = evalset.aggregates()
    if args.out:
        spath = export_trajectories(evalset, args.out)
        print(f"wrote {spath}")
    print(
        f"trials {agg['trials']}: success {agg['success_rate']:.3f}  "
        f"crash {agg['crash_rate']:.3f}  timeout {agg['timeout_rate']:.3f}"
    )
    if agg["median_lambda_d"] is not None:
        print(
            f"median lambda_d {agg['median_lambda_d']:.3f}  "
            f"median lambda_t {agg['median_lambda_t']:.3f}"
        )
    return 0


def cmd_metrics(args) -> int:
    with open(args.summary, "r", encoding="ascii") as fh:
        summary = json.load(fh)
    agg = summary.get("aggregates", {})
    for key in ("trials", "success_rate", "crash_rate", "timeout_rate",
                "median_lambda_d", "median_lambda_t"):
        print(f"{key}: {agg.get(key)}")
    return 0


def cmd_show_config(args) -> int:
    cfg = _load_cfg(args)
    sys.stdout.write(dump_config(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rilnav",
        description="Target-driven navigation: demos, cloning, constrained RL, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-map", help="generate an occupancy grid map file")
    p.add_argument("kind", choices=sorted(KINDS))
    p.add_argument("--width", type=float, default=10.0, help="width in meters")
    p.add_argument("--height", type=float, default=10.0, help="height in meters")
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_map)

    p = sub.add_parser("gen-demos", help="generate expert demonstrations")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--maps", nargs="*", default=None)
    p.add_argument("--count", type=int, default=None, help="demos per map")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("train-il", help="behavior-clone a policy from demos")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--demos", nargs="*", default=None, help="demo files")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_il)

    p = sub.add_parser("train-rl", help="run the full training recipe")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--demos", nargs="*", default=None, help="demo files")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on fixed trials")
    p.add_argument("checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--maps", nargs="*", default=None)
    p.add_argument("--trials", type=int, default=None, help="trials per map")
    p.add_argument("--out", default=None, help="trajectory export directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("metrics", help="print aggregates from an evaluation summary")
    p.add_argument("summary", help="summary.json from evaluate --out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("show-config", help="print the effective configuration")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_show_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RilnavError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
