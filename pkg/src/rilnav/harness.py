"""Experiment harness: full training runs, the evaluation protocol and
planner-relative metrics.

A training run is: generate demos (when configured), clone them, then the
on-policy RL loop with per-iteration CSV logging, rolling success/crash
curves over the last 20 iterations, and periodic checkpoints. Evaluation
rolls the deterministic mean policy over a trial list that depends only on
(maps, trial count, seed), so different checkpoints face identical trials.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .demos import DemoSet, generate_demoset, load_demoset, path_length, plan_path, save_demoset
from .errors import ConfigError, PlanError, RilnavError, SimError, TrainError
from .imitation import train_il
from .observation import build_observation
from .policy import MlpParams, forward, init_policy, load_checkpoint, save_checkpoint
from .rewards import make_reward_spec, reward as reward_fn
from .rlcore import (
    EnvBundle,
    UpdateReport,
    collect_batch,
    cpo_step,
    init_value_nets,
    trpo_step,
)
from .worldsim import (
    OccupancyGrid,
    Pose,
    as_generator,
    load_map,
    sample_free_pose,
    scan,
    step,
)

ROLLING_WINDOW = 20
CSV_HEADER = (
    "iteration,mean_return,success_rate,crash_rate,jc,kl,"
    "step_accepted,surrogate_improvement,rolling_success,rolling_crash"
)


def load_grids(paths) -> list:
    if not paths:
        raise ConfigError("no map files configured")
    return [load_map(p) for p in paths]


def build_env(cfg: ExperimentConfig, grids: list) -> EnvBundle:
    return EnvBundle(
        grids=grids,
        sim=cfg.sim,
        reward_variant=cfg.reward,
        inflate=cfg.effective_inflate(),
        success_bonus=cfg.success_bonus,
        min_separation=cfg.min_separation,
    )


def report_row(rep: UpdateReport, rolling_success: float, rolling_crash: float) -> str:
    return (
        f"{rep.iteration},{rep.mean_return:.17g},{rep.success_rate:.17g},"
        f"{rep.crash_rate:.17g},{rep.jc:.17g},{rep.kl:.17g},"
        f"{int(rep.step_accepted)},{rep.surrogate_improvement:.17g},"
        f"{rolling_success:.17g},{rolling_crash:.17g}"
    )


@dataclass
class TrainResult:
    params: MlpParams
    reports: list
    csv_path: str | None
    checkpoint_path: str | None
    il_report: object = None
    demo_paths: list = field(default_factory=list)

    def rolling_success(self) -> list:
        out = []
        vals = [r.success_rate for r in self.reports]
        for i in range(len(vals)):
            lo = max(0, i - ROLLING_WINDOW + 1)
            out.append(float(np.mean(vals[lo : i + 1])))
        return out


def rolling_mean(vals: list, window: int = ROLLING_WINDOW) -> list:
    out = []
    for i in range(len(vals)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(vals[lo : i + 1])))
    return out


def run_training(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    demoset: DemoSet | None = None,
    demo_files: list | None = None,
    progress=None,
) -> TrainResult:
    """Execute the configured recipe end to end.

    Artifacts land in ``out_dir`` (iteration CSV, demo files, checkpoints);
    pass None to keep everything in memory. An explicit ``demoset`` or list
    of demo files skips generation. ``progress`` is an optional callback
    fed each UpdateReport.
    """
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    box = cfg.box()
    master = np.random.SeedSequence(cfg.seed)
    init_rng = as_generator(np.random.SeedSequence([cfg.seed, 0xA11CE]))

    il_report = None
    demo_paths = []
    params = None
    if cfg.demo_count > 0:
        if demoset is None:
            if demo_files:
                demoset = load_demoset(demo_files)
            else:
                il_grids = load_grids(cfg.il_maps or cfg.rl_maps)
                demoset = generate_demoset(
                    il_grids,
                    cfg.demo_count,
                    seed=cfg.seed,
                    cfg=cfg.sim,
                    gains=cfg.demos.gains(),
                    clearance_margin=cfg.demos.clearance_margin,
                    min_separation=cfg.demos.min_separation,
                    step_cap=cfg.demos.step_cap,
                    retry_factor=cfg.demos.retry_factor,
                )
        if out_dir is not None:
            demo_paths = save_demoset(demoset, os.path.join(out_dir, "demos"))
        params, il_report = train_il(demoset, cfg.il_config(), box)
        if out_dir is not None:
            with open(os.path.join(out_dir, "il_losses.csv"), "w", encoding="ascii") as fh:
                fh.write(il_report.to_csv())
    if params is None:
        params = init_policy(
            init_rng, box, hidden=tuple(cfg.policy_hidden),
            dropout_rate=cfg.dropout, std_scale=cfg.std_scale,
        )

    rl_grids = load_grids(cfg.rl_maps) if cfg.rl_iterations > 0 else []
    reports = []
    csv_path = None
    checkpoint_path = None
    if cfg.rl_iterations > 0:
        env = build_env(cfg, rl_grids)
        values = init_value_nets(
            as_generator(np.random.SeedSequence([cfg.seed, 0xBEEF])),
            hidden=tuple(cfg.value_hidden),
        )
        trust = cfg.trust_config()
        step_fn = cpo_step if cfg.optimizer == "cpo" else trpo_step
        rows = [CSV_HEADER]
        succ_hist: list = []
        crash_hist: list = []
        if out_dir is not None:
            csv_path = os.path.join(out_dir, "iterations.csv")
        for it in range(1, cfg.rl_iterations + 1):
            batch_seed = int(
                np.random.SeedSequence([cfg.seed, 0xC0117EC7, it]).generate_state(1)[0]
            )
            try:
                batch = collect_batch(
                    env, params, box, cfg.batch_size, cfg.episode_cap, seed=batch_seed
                )
                params, values, rep = step_fn(params, box, values, batch, trust)
            except RilnavError as exc:
                raise TrainError(f"iteration {it}: {exc}") from exc
            rep.iteration = it
            reports.append(rep)
            succ_hist.append(rep.success_rate)
            crash_hist.append(rep.crash_rate)
            roll_s = float(np.mean(succ_hist[-ROLLING_WINDOW:]))
            roll_c = float(np.mean(crash_hist[-ROLLING_WINDOW:]))
            rows.append(report_row(rep, roll_s, roll_c))
            if progress is not None:
                progress(rep)
            if out_dir is not None:
                if it % max(1, cfg.checkpoint_every) == 0:
                    save_checkpoint(params, os.path.join(out_dir, f"policy_{it:05d}.rilnet1"))
                with open(csv_path, "w", encoding="ascii") as fh:
                    fh.write("\n".join(rows) + "\n")
    if out_dir is not None:
        checkpoint_path = os.path.join(out_dir, "policy_final.rilnet1")
        save_checkpoint(params, checkpoint_path)
    return TrainResult(
        params=params,
        reports=reports,
        csv_path=csv_path,
        checkpoint_path=checkpoint_path,
        il_report=il_report,
        demo_paths=demo_paths,
    )


# -- evaluation protocol --------------------------------------------------


@dataclass
class EvalTrial:
    map_name: str
    map_idx: int
    start: Pose
    goal: Pose
    outcome: str = ""
    steps: int = 0
    path_length: float = 0.0
    lambda_d: float | None = None
    lambda_t: float | None = None
    trajectory: np.ndarray | None = None
    trajectory_file: str | None = None


@dataclass
class EvalSet:
    checkpoint: str
    seed: int
    trials: list

    def aggregates(self) -> dict:
        n = len(self.trials)
        out = {
            "trials": n,
            "success_rate": sum(t.outcome == "success" for t in self.trials) / max(n, 1),
            "crash_rate": sum(t.outcome == "crash" for t in self.trials) / max(n, 1),
            "timeout_rate": sum(t.outcome == "timeout" for t in self.trials) / max(n, 1),
        }
        lds = [t.lambda_d for t in self.trials if t.lambda_d is not None]
        lts = [t.lambda_t for t in self.trials if t.lambda_t is not None]
        out["median_lambda_d"] = float(np.median(lds)) if lds else None
        out["median_lambda_t"] = float(np.median(lts)) if lts else None
        return out


def make_trials(
    grids: list,
    trials_per_map: int,
    seed: int,
    sim,
    inflate: float,
    min_separation: float = 1.0,
) -> list:
    """Deterministic trial list; a pure function of (maps, count, seed).

    Start/goal pairs keep robot clearance, a minimum separation, and mutual
    reachability on the inflated grid.
    """
    from .rewards import dijkstra_field

    trials = []
    for m_idx, grid in enumerate(grids):
        for t_idx in range(trials_per_map):
            for attempt in range(200):
                rng = as_generator(np.random.SeedSequence([int(seed), m_idx, t_idx, attempt]))
                start = sample_free_pose(grid, rng, inflate)
                goal = sample_free_pose(grid, rng, inflate)
                if start.distance_to(goal) < min_separation:
                    continue
                fld = dijkstra_field(grid, goal, inflate)
                if not math.isfinite(fld.value_at(start.x, start.y)):
                    continue
                trials.append(EvalTrial(map_name=grid.name, map_idx=m_idx, start=start, goal=goal))
                break
            else:
                raise SimError(f"could not sample eval trial {t_idx} on map {grid.name!r}")
    return trials


def planner_relative_metrics(trial: EvalTrial, grid: OccupancyGrid, sim) -> tuple:
    """(lambda_d, lambda_t): policy path length and duration relative to the
    shortest feasible path and its full-speed traversal time."""
    planned = plan_path(grid, trial.start, trial.goal, inflate=sim.robot_radius)
    ref_len = path_length([(trial.start.x, trial.start.y)] + planned)
    if ref_len <= 0.0:
        return None, None
    ref_steps = ref_len / (sim.v_max * sim.dt)
    return trial.path_length / ref_len, trial.steps / ref_steps


def evaluate(
    checkpoint,
    grids: list,
    trials_per_map: int,
    seed: int,
    cfg: ExperimentConfig,
    with_metrics: bool = True,
) -> EvalSet:
    """Run the deterministic mean policy over the trial list.

    ``checkpoint`` is a file path or an in-memory MlpParams. Each trial ends
    on goal arrival, on the first crash (scored as failure), or at the
    timeout step cap exactly. Per-step trajectories are retained in memory
    for export.
    """
    if isinstance(checkpoint, MlpParams):
        params = checkpoint
        ckpt_name = "<in-memory>"
    else:
        params = load_checkpoint(checkpoint)
        ckpt_name = str(checkpoint)
    box = cfg.box()
    sim = cfg.sim
    inflate = cfg.effective_inflate()
    trials = make_trials(
        grids, trials_per_map, seed, sim, inflate, min_separation=cfg.min_separation
    )
    for trial in trials:
        grid = grids[trial.map_idx]
        try:
            spec = make_reward_spec(cfg.reward, grid, trial.goal, inflate,
                                    success_bonus=cfg.success_bonus)
        except PlanError:  # pragma: no cover - trials are sampled reachable
            spec = None
        pose = trial.start
        cur_scan = scan(grid, pose, sim)
        rows = []
        outcome = "timeout"
        for t in range(cfg.eval_timeout):
            ob = build_observation(cur_scan, pose, trial.goal)
            mean = forward(params, box, ob).mean
            out = step(grid, pose, (mean[0], mean[1]), trial.goal, sim)
            r = reward_fn(spec, pose, out.pose, out.reached_goal) if spec else 0.0
            c = 1.0 if out.crashed else 0.0
            trial.path_length += pose.distance_to(out.pose)
            rows.append((t, out.pose.x, out.pose.y, out.pose.theta, mean[0], mean[1], r, c))
            pose = out.pose
            cur_scan = out.scan
            if out.crashed:
                outcome = "crash"
                break
            if out.reached_goal:
                outcome = "success"
                break
        trial.outcome = outcome
        trial.steps = len(rows)
        trial.trajectory = np.asarray(rows, dtype=np.float64)
        if with_metrics and outcome == "success":
            trial.lambda_d, trial.lambda_t = planner_relative_metrics(trial, grid, sim)
    return EvalSet(checkpoint=ckpt_name, seed=int(seed), trials=trials)


TRAJ_HEADER = "t,x,y,theta,v,omega,reward,cost"


def export_trajectories(evalset: EvalSet, directory) -> str:
    """Write one CSV per trial plus a JSON summary; returns the summary path.
    Re-running over the same records writes identical bytes."""
    directory = str(directory)
    os.makedirs(directory, exist_ok=True)
    records = []
    for i, trial in enumerate(evalset.trials):
        fname = f"trial_{i:04d}_{trial.map_name}.csv"
        lines = [TRAJ_HEADER]
        for row in trial.trajectory:
            lines.append(
                f"{int(row[0])}," + ",".join(f"{v:.17g}" for v in row[1:])
            )
        with open(os.path.join(directory, fname), "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        trial.trajectory_file = fname
        records.append(
            {
                "map": trial.map_name,
                "start": [trial.start.x, trial.start.y, trial.start.theta],
                "goal": [trial.goal.x, trial.goal.y],
                "outcome": trial.outcome,
                "steps": trial.steps,
                "path_length": trial.path_length,
                "lambda_d": trial.lambda_d,
                "lambda_t": trial.lambda_t,
                "trajectory_file": fname,
            }
        )
    summary = {
        "checkpoint": evalset.checkpoint,
        "seed": evalset.seed,
        "aggregates": evalset.aggregates(),
        "trials": records,
    }
    spath = os.path.join(directory, "summary.json")
    with open(spath, "w", encoding="ascii") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return spath
