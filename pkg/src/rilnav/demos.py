"""Expert demonstrations: grid planning, pure-pursuit tracking, demo files.

A demonstration is the (observation, command) trace of a pure-pursuit
controller following a shortest grid path that was decimated by
line-of-sight smoothing. Crashing attempts are discarded, so demo sets only
ever contain successful, goal-reaching traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import observation as obs_mod
from .errors import DemoError, PlanError, RewardError
from .rewards import NEIGHBORS, dijkstra_field
from .worldsim import OccupancyGrid, Pose, SimConfig, as_generator, sample_free_pose, scan, step, wrap_angle

DEMO_MAGIC = "RILDEMO1"


@dataclass
class PursuitGains:
    lookahead: float = 0.5
    k_omega: float = 2.0


@dataclass
class Demonstration:
    map_name: str
    start: Pose | None
    goal: Pose | None
    observations: np.ndarray  # (T, 38)
    commands: np.ndarray      # (T, 2)

    @property
    def steps(self) -> int:
        return self.observations.shape[0]


@dataclass
class DemoSet:
    demos: list
    seed: int
    map_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.map_names:
            seen = []
            for d in self.demos:
                if d.map_name not in seen:
                    seen.append(d.map_name)
            self.map_names = seen

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All (observation, command) pairs stacked for training."""
        if not self.demos:
            return np.zeros((0, obs_mod.OBS_DIM)), np.zeros((0, 2))
        obs = np.concatenate([d.observations for d in self.demos], axis=0)
        cmd = np.concatenate([d.commands for d in self.demos], axis=0)
        return obs, cmd

    @property
    def total_steps(self) -> int:
        return sum(d.steps for d in self.demos)


# -- planning -------------------------------------------------------------


def _segment_clear(grid: OccupancyGrid, p0, p1, inflate: float) -> bool:
    """Disc-swept visibility between two points, sampled at quarter cells."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    length = math.hypot(dx, dy)
    n = max(1, int(math.ceil(length / (grid.resolution * 0.25))))
    for i in range(n + 1):
        f = i / n
        if grid.disc_collides(p0[0] + f * dx, p0[1] + f * dy, inflate):
            return False
    return True


def smooth_path(grid: OccupancyGrid, points: list, inflate: float) -> list:
    """Greedy line-of-sight decimation keeping both endpoints."""
    if len(points) <= 2:
        return list(points)
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not _segment_clear(grid, points[i], points[j], inflate):
            j -= 1
        out.append(points[j])
        i = j
    return out


def plan_path(
    grid: OccupancyGrid,
    start: Pose,
    goal: Pose,
    inflate: float,
    smooth: bool = True,
) -> list:
    """Waypoint list from start to goal on the inflated grid.

    The raw path descends the goal-rooted Dijkstra field from the start cell
    (cell centers), then the exact goal position replaces the goal cell
    center; optional smoothing decimates collinear-ish runs. Raises PlanError
    when the goal is unreachable from the start.
    """
    try:
        fld = dijkstra_field(grid, goal, inflate)
    except RewardError:
        raise PlanError(
            f"no path from ({start.x:.2f}, {start.y:.2f}) to "
            f"({goal.x:.2f}, {goal.y:.2f}) on map {grid.name!r}: goal blocked"
        ) from None
    six, sjy = grid.cell_of(start.x, start.y)
    if not grid.in_bounds(six, sjy) or not math.isfinite(fld.dist[sjy, six]):
        raise PlanError(
            f"no path from ({start.x:.2f}, {start.y:.2f}) to "
            f"({goal.x:.2f}, {goal.y:.2f}) on map {grid.name!r}"
        )
    gix, gjy = fld.goal_cell
    if (six, sjy) == (gix, gjy):
        return [(goal.x, goal.y)]
    cells = [(six, sjy)]
    ix, jy = six, sjy
    h, w = fld.dist.shape
    while (ix, jy) != (gix, gjy):
        best = None
        best_val = math.inf
        for di, dj, _ in NEIGHBORS:
            ni, nj = ix + di, jy + dj
            if 0 <= ni < w and 0 <= nj < h and fld.dist[nj, ni] < best_val:
                best_val = fld.dist[nj, ni]
                best = (ni, nj)
        if best is None or not best_val < fld.dist[jy, ix]:
            raise PlanError("distance field descent stalled")  # pragma: no cover
        ix, jy = best
        cells.append(best)
    points = [grid.center_of(cix, cjy) for cix, cjy in cells[:-1]] + [(goal.x, goal.y)]
    if smooth:
        points = smooth_path(grid, points, inflate)
    return points


def path_length(points: list) -> float:
    total = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        total += math.hypot(x1 - x0, y1 - y0)
    return total


# -- tracking -------------------------------------------------------------


def _lookahead_point(points: list, arc: float) -> tuple:
    """Point at arc length ``arc`` along the polyline, clamped to the end."""
    remaining = arc
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        seg = math.hypot(x1 - x0, y1 - y0)
        if remaining <= seg and seg > 0.0:
            f = remaining / seg
            return (x0 + f * (x1 - x0), y0 + f * (y1 - y0))
        remaining -= seg
    return points[-1]


def _projected_arc(points: list, x: float, y: float) -> float:
    """Arc length of the closest point on the polyline to (x, y)."""
    best_d2 = math.inf
    best_arc = 0.0
    arc0 = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        sx, sy = x1 - x0, y1 - y0
        seg2 = sx * sx + sy * sy
        if seg2 == 0.0:
            continue
        f = ((x - x0) * sx + (y - y0) * sy) / seg2
        f = min(max(f, 0.0), 1.0)
        px, py = x0 + f * sx, y0 + f * sy
        d2 = (px - x) ** 2 + (py - y) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best_arc = arc0 + f * math.sqrt(seg2)
        arc0 += math.sqrt(seg2)
    return best_arc


def track_path(
    grid: OccupancyGrid,
    path: list,
    goal: Pose,
    start: Pose,
    cfg: SimConfig,
    gains: PursuitGains,
    step_cap: int,
) -> Demonstration | None:
    """Drive pure pursuit along ``path`` and record (observation, command)
    pairs. Commands: omega = k_omega * bearing error to the lookahead point,
    v = v_max * max(0, cos(bearing error)); both live inside the command box
    by construction. Returns None when the attempt crashes or times out."""
    pose = start
    cur_scan = scan(grid, pose, cfg)
    progress = 0.0
    obs_rows = []
    cmd_rows = []
    for _ in range(step_cap):
        progress = max(progress, _projected_arc(path, pose.x, pose.y))
        lx, ly = _lookahead_point(path, progress + gains.lookahead)
        bearing = wrap_angle(math.atan2(ly - pose.y, lx - pose.x) - pose.theta)
        omega = min(max(gains.k_omega * bearing, -cfg.omega_max), cfg.omega_max)
        v = cfg.v_max * max(0.0, math.cos(bearing))
        obs_rows.append(obs_mod.build_observation(cur_scan, pose, goal))
        cmd_rows.append((v, omega))
        outcome = step(grid, pose, (v, omega), goal, cfg)
        pose = outcome.pose
        cur_scan = outcome.scan
        if outcome.crashed:
            return None
        if outcome.reached_goal:
            return Demonstration(
                map_name=grid.name,
                start=start,
                goal=goal,
                observations=np.asarray(obs_rows),
                commands=np.asarray(cmd_rows),
            )
    return None


# -- generation -----------------------------------------------------------


def generate_demoset(
    grids: list,
    count_per_map: int,
    seed: int,
    cfg: SimConfig,
    gains: PursuitGains | None = None,
    clearance_margin: float = 0.1,
    min_separation: float = 1.0,
    step_cap: int = 600,
    retry_factor: int = 20,
) -> DemoSet:
    """Generate ``count_per_map`` successful demos on every map.

    Start/goal pairs are sampled with robot clearance plus a safety margin;
    the planner also inflates by the margin so pure pursuit has slack to cut
    corners. Every attempt draws from its own (seed, map, attempt) stream, so
    the result is a pure function of the arguments. Raises DemoError when a
    map exhausts its retry budget."""
    if count_per_map <= 0:
        raise DemoError(f"demo count must be positive, got {count_per_map}")
    gains = gains or PursuitGains()
    clearance = cfg.robot_radius + clearance_margin
    demos = []
    for m_idx, grid in enumerate(grids):
        got = 0
        budget = retry_factor * count_per_map
        for attempt in range(budget):
            rng = as_generator(np.random.SeedSequence([int(seed), m_idx, attempt]))
            start = sample_free_pose(grid, rng, clearance)
            goal = sample_free_pose(grid, rng, clearance)
            if start.distance_to(goal) < min_separation:
                continue
            try:
                path = plan_path(grid, start, goal, inflate=clearance)
            except PlanError:
                continue
            demo = track_path(grid, path, goal, start, cfg, gains, step_cap)
            if demo is not None:
                demos.append(demo)
                got += 1
                if got == count_per_map:
                    break
        if got < count_per_map:
            raise DemoError(
                f"map {grid.name!r}: only {got}/{count_per_map} demos after "
                f"{budget} attempts"
            )
    return DemoSet(demos=demos, seed=int(seed), map_names=[g.name for g in grids])


# -- demo file format -----------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def dump_demos(demos: list, map_name: str, seed: int) -> str:
    """One map's demos as text: a header line, then one CSV row per step:
    demo id, step index, 38 observation values, v, omega."""
    lines = [f"{DEMO_MAGIC} {map_name} {len(demos)} {seed}"]
    for demo_id, demo in enumerate(demos):
        for t in range(demo.steps):
            vals = [str(demo_id), str(t)]
            vals.extend(_fmt(v) for v in demo.observations[t])
            vals.extend(_fmt(v) for v in demo.commands[t])
            lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def save_demoset(demoset: DemoSet, directory) -> list:
    """Write one RILDEMO1 file per map; returns the paths."""
    import os

    os.makedirs(str(directory), exist_ok=True)
    paths = []
    for name in demoset.map_names:
        demos = [d for d in demoset.demos if d.map_name == name]
        path = os.path.join(str(directory), f"{name}.rildemo1")
        with open(path, "w", encoding="ascii") as fh:
            fh.write(dump_demos(demos, name, demoset.seed))
        paths.append(path)
    return paths


def parse_demos(text: str, path: str = "<demo>") -> tuple[list, int]:
    lines = text.splitlines()
    if not lines:
        raise DemoError(f"{path}: empty demo file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != DEMO_MAGIC:
        raise DemoError(f"{path}: line 1: expected '{DEMO_MAGIC} <map> <count> <seed>'")
    map_name = head[1]
    try:
        count, seed = int(head[2]), int(head[3])
    except ValueError:
        raise DemoError(f"{path}: line 1: bad count/seed") from None
    per_demo: dict[int, list] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2 + obs_mod.OBS_DIM + 2:
            raise DemoError(f"{path}: line {i}: expected {2 + obs_mod.OBS_DIM + 2} fields")
        try:
            demo_id = int(parts[0])
            t = int(parts[1])
            vals = [float(p) for p in parts[2:]]
        except ValueError:
            raise DemoError(f"{path}: line {i}: bad number") from None
        rows = per_demo.setdefault(demo_id, [])
        if t != len(rows):
            raise DemoError(f"{path}: line {i}: step index {t} out of order")
        rows.append(vals)
    if len(per_demo) != count:
        raise DemoError(f"{path}: header says {count} demos, file has {len(per_demo)}")
    demos = []
    for demo_id in sorted(per_demo):
        arr = np.asarray(per_demo[demo_id], dtype=np.float64)
        demos.append(
            Demonstration(
                map_name=map_name,
                start=None,
                goal=None,
                observations=arr[:, : obs_mod.OBS_DIM],
                commands=arr[:, obs_mod.OBS_DIM :],
            )
        )
    return demos, seed


def load_demoset(paths) -> DemoSet:
    """Read demo files (poses are not stored in the format, only the
    observation/command pairs needed for cloning)."""
    all_demos = []
    seed = 0
    names = []
    for path in paths:
        try:
            with open(str(path), "r", encoding="ascii") as fh:
                text = fh.read()
        except OSError as exc:
            raise DemoError(f"cannot read demos {path}: {exc}") from None
        demos, seed = parse_demos(text, path=str(path))
        all_demos.extend(demos)
        for d in demos:
            if d.map_name not in names:
                names.append(d.map_name)
    return DemoSet(demos=all_demos, seed=seed, map_names=names)
