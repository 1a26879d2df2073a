"""2D occupancy-grid world: map files, lidar raycasting, unicycle stepping.

Conventions
-----------
* World coordinates are meters, x to the right, y up, origin at the
  bottom-left corner of the grid. Headings are radians in (-pi, pi].
* Map files store rows top-first; in memory the occupancy array is kept
  bottom-up (``occ[jy, ix]``, ``jy = 0`` at y = 0) so index math needs no
  flipping. ``OccupancyGrid.cells`` re-exposes the file ordering.
* The robot is a disc. Collision tests never mutate the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import MapError, SimError

MAP_MAGIC = "RILMAP1"
TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % TWO_PI


@dataclass(frozen=True)
class Pose:
    """Planar robot pose; theta is stored wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def distance_to(self, other: "Pose") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class LidarScan:
    """One sweep of range readings, beam 0 at -fov/2 relative to heading."""

    ranges: np.ndarray
    fov: float
    max_range: float


@dataclass(frozen=True)
class StepOutcome:
    pose: Pose
    scan: LidarScan
    crashed: bool
    reached_goal: bool


@dataclass
class SimConfig:
    """Simulator constants. Defaults match the reference platform: 5 Hz
    commands, 270 degree 1080-beam lidar with 30 m range, 0.18 m robot disc."""

    dt: float = 0.2
    v_max: float = 0.5
    omega_max: float = 1.0
    robot_radius: float = 0.18
    goal_radius: float = 0.3
    max_range: float = 30.0
    beams: int = 1080
    fov: float = 1.5 * math.pi
    substeps: int = 4
    noise_std: float = 0.0


@dataclass
class OccupancyGrid:
    """Immutable-by-convention occupancy grid.

    ``occ`` is a bool array of shape (height, width), row 0 at the bottom of
    the world. Cell (ix, jy) covers [ix*res, (ix+1)*res) x [jy*res, (jy+1)*res).
    """

    width: int
    height: int
    resolution: float
    occ: np.ndarray
    name: str = "map"
    _masks: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise MapError(f"grid must be at least 3x3, got {self.width}x{self.height}")
        if not self.resolution > 0.0:
            raise MapError(f"resolution must be positive, got {self.resolution}")
        if self.occ.shape != (self.height, self.width):
            raise MapError(
                f"occupancy shape {self.occ.shape} does not match "
                f"{self.height}x{self.width}"
            )
        border = (
            self.occ[0, :].all()
            and self.occ[-1, :].all()
            and self.occ[:, 0].all()
            and self.occ[:, -1].all()
        )
        if not border:
            raise MapError("boundary cells must all be occupied (closed world)")

    # -- geometry helpers -------------------------------------------------

    @property
    def width_m(self) -> float:
        return self.width * self.resolution

    @property
    def height_m(self) -> float:
        return self.height * self.resolution

    @property
    def cells(self) -> np.ndarray:
        """Row-major occupancy in file order (row 0 = top edge)."""
        return np.flipud(self.occ).reshape(-1).copy()

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(ix, jy) of the cell containing a world point; jy from bottom."""
        return int(math.floor(x / self.resolution)), int(math.floor(y / self.resolution))

    def in_bounds(self, ix: int, jy: int) -> bool:
        return 0 <= ix < self.width and 0 <= jy < self.height

    def center_of(self, ix: int, jy: int) -> tuple[float, float]:
        return (ix + 0.5) * self.resolution, (jy + 0.5) * self.resolution

    def occupied_at(self, x: float, y: float) -> bool:
        ix, jy = self.cell_of(x, y)
        if not self.in_bounds(ix, jy):
            return True
        return bool(self.occ[jy, ix])

    def clearance_mask(self, radius: float) -> np.ndarray:
        """Free cells whose center keeps a disc of ``radius`` obstacle-free.

        Cached per radius; the grid itself is never modified after load.
        """
        key = round(float(radius), 9)
        mask = self._masks.get(key)
        if mask is None:
            mask = np.empty_like(self.occ)
            _kernels.clearance_mask(self.occ, self.resolution, float(radius), mask)
            mask.setflags(write=False)
            self._masks[key] = mask
        return mask

    def disc_collides(self, x: float, y: float, radius: float) -> bool:
        return bool(
            _kernels.disc_hits_obstacle(self.occ, self.resolution, x, y, radius)
        )


def grid_from_occ(occ: np.ndarray, resolution: float, name: str = "map") -> OccupancyGrid:
    """Build a grid from a bottom-up boolean array, validating invariants."""
    occ = np.ascontiguousarray(occ, dtype=bool)
    h, w = occ.shape
    return OccupancyGrid(width=w, height=h, resolution=float(resolution), occ=occ, name=name)


# -- map file format ------------------------------------------------------


def parse_map(text: str, name: str = "map") -> OccupancyGrid:
    """Parse map text: magic line, a 'width height resolution' line, then
    height rows of '#' (occupied) / '.' (free), top row first."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAP_MAGIC:
        raise MapError(f"line 1: expected {MAP_MAGIC} header")
    if len(lines) < 2:
        raise MapError("line 2: expected '<width> <height> <resolution>'")
    parts = lines[1].split()
    if len(parts) != 3:
        raise MapError("line 2: expected '<width> <height> <resolution>'")
    try:
        width, height = int(parts[0]), int(parts[1])
        resolution = float(parts[2])
    except ValueError as exc:
        raise MapError(f"line 2: bad dimensions: {exc}") from None
    rows = [ln for ln in lines[2:]]
    # Tolerate trailing blank lines only.
    while rows and rows[-1].strip() == "":
        rows.pop()
    if len(rows) != height:
        raise MapError(f"expected {height} rows, got {len(rows)}")
    occ_top = np.empty((height, width), dtype=bool)
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise MapError(f"row {r}: expected {width} cells")
        for c, ch in enumerate(row):
            if ch == "#":
                occ_top[r - 1, c] = True
            elif ch == ".":
                occ_top[r - 1, c] = False
            else:
                raise MapError(f"row {r}: invalid cell character {ch!r}")
    for r in range(1, height + 1):
        row_vals = occ_top[r - 1]
        edge_row = r == 1 or r == height
        if (edge_row and not row_vals.all()) or not (row_vals[0] and row_vals[-1]):
            raise MapError(f"row {r}: open boundary (edge cells must be '#')")
    return grid_from_occ(occ_top[::-1], resolution, name=name)


def load_map(path) -> OccupancyGrid:
    path = str(path)
    try:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as exc:
        raise MapError(f"cannot read map {path}: {exc}") from None
    stem = path.rsplit("/", 1)[-1]
    stem = stem.rsplit(".", 1)[0]
    return parse_map(text, name=stem)


def dump_map(grid: OccupancyGrid) -> str:
    rows = ["".join("#" if v else "." for v in row) for row in grid.occ[::-1]]
    header = f"{MAP_MAGIC}\n{grid.width} {grid.height} {grid.resolution!r}\n"
    return header + "\n".join(rows) + "\n"


def save_map(grid: OccupancyGrid, path) -> None:
    with open(str(path), "w", encoding="ascii") as fh:
        fh.write(dump_map(grid))


# -- sensing --------------------------------------------------------------


def raycast(grid: OccupancyGrid, origin: Pose, bearing: float, max_range: float) -> float:
    """Range from ``origin`` along ``origin.theta + bearing``.

    Exact grid traversal; the returned distance is where the ray enters the
    first occupied cell, clamped to max_range.
    """
    if max_range <= 0.0:
        raise SimError(f"max_range must be positive, got {max_range}")
    ang = origin.theta + bearing
    r = _kernels.ray_range(
        grid.occ, grid.resolution, origin.x, origin.y,
        math.cos(ang), math.sin(ang), float(max_range),
    )
    if r < 0.0:
        raise SimError("raycast origin lies inside an obstacle or outside the map")
    return float(r)


def scan(grid: OccupancyGrid, pose: Pose, cfg: SimConfig, rng: np.random.Generator | None = None) -> LidarScan:
    """Full lidar sweep at ``pose``. Optional Gaussian range noise is applied
    after raycasting and clipped to (0, max_range]."""
    if grid.occupied_at(pose.x, pose.y):
        raise SimError("scan origin lies inside an obstacle or outside the map")
    out = np.empty(cfg.beams, dtype=np.float64)
    ok = _kernels.scan_ranges(
        grid.occ, grid.resolution, pose.x, pose.y, pose.theta,
        cfg.fov, cfg.max_range, out,
    )
    if not ok:
        raise SimError("scan origin lies inside an obstacle or outside the map")
    if cfg.noise_std > 0.0:
        if rng is None:
            raise SimError("noise_std > 0 requires an rng")
        out = out + cfg.noise_std * rng.standard_normal(out.shape)
        np.clip(out, 1e-6, cfg.max_range, out=out)
    else:
        # A sensor origin exactly on a cell border next to an obstacle can
        # yield a geometric range of zero; keep ranges strictly positive.
        np.maximum(out, np.finfo(np.float64).tiny, out=out)
    return LidarScan(ranges=out, fov=cfg.fov, max_range=cfg.max_range)


# -- dynamics -------------------------------------------------------------


def clamp_command(v: float, omega: float, cfg: SimConfig) -> tuple[float, float]:
    """Clamp to the command box: v in [0, v_max], omega in [-omega_max, omega_max]."""
    v = min(max(float(v), 0.0), cfg.v_max)
    omega = min(max(float(omega), -cfg.omega_max), cfg.omega_max)
    return v, omega


def step(
    grid: OccupancyGrid,
    pose: Pose,
    command: tuple[float, float],
    goal: Pose,
    cfg: SimConfig,
    rng: np.random.Generator | None = None,
) -> StepOutcome:
    """Advance one control period of unicycle kinematics.

    The candidate pose is a single Euler step; the translation is swept in
    ``cfg.substeps`` intermediate positions and cancelled entirely if any of
    them collides (the rotation is kept, the episode does not end here).
    reached_goal is true only for a crash-free step ending within goal_radius.
    """
    v, omega = clamp_command(command[0], command[1], cfg)
    cx = pose.x + v * math.cos(pose.theta) * cfg.dt
    cy = pose.y + v * math.sin(pose.theta) * cfg.dt
    ctheta = wrap_angle(pose.theta + omega * cfg.dt)

    crashed = False
    for k in range(1, cfg.substeps + 1):
        f = k / cfg.substeps
        px = pose.x + f * (cx - pose.x)
        py = pose.y + f * (cy - pose.y)
        if grid.disc_collides(px, py, cfg.robot_radius):
            crashed = True
            break

    if crashed:
        new_pose = Pose(pose.x, pose.y, ctheta)
    else:
        new_pose = Pose(cx, cy, ctheta)
    reached = (not crashed) and new_pose.distance_to(goal) <= cfg.goal_radius
    new_scan = scan(grid, new_pose, cfg, rng=rng)
    return StepOutcome(pose=new_pose, scan=new_scan, crashed=crashed, reached_goal=reached)


# -- sampling -------------------------------------------------------------


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, SeedSequence, or plain integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(rng))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(rng))))


def sample_free_pose(grid: OccupancyGrid, rng, clearance: float) -> Pose:
    """Uniform pose over free cells with disc clearance; heading uniform.

    The position is the chosen cell's center, so the distribution is uniform
    over the eligible cell set exactly.
    """
    gen = as_generator(rng)
    mask = grid.clearance_mask(clearance)
    flat = np.flatnonzero(mask.reshape(-1))
    if flat.size == 0:
        raise SimError(
            f"no free cell admits clearance {clearance:.3g} on map {grid.name!r}"
        )
    pick = int(flat[gen.integers(flat.size)])
    jy, ix = divmod(pick, grid.width)
    x, y = grid.center_of(ix, jy)
    theta = wrap_angle(gen.uniform(-math.pi, math.pi))
    return Pose(x, y, theta)
