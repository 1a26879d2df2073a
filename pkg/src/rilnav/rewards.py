"""Reward shaping, crash costs and goal-distance fields.

Shaping variants: "sparse" (d == 0 everywhere), "euclidean" (straight-line
distance to the goal) and "shortest_path" (8-connected grid shortest path on
the obstacle-inflated map). Per step the reward is the success bonus on goal
arrival and -(d(s_t) - d(s_{t-1})) otherwise; the cost is the crash
indicator.

The Dijkstra field stores, per cell, the *exact* pair (straight, diagonal)
of edge counts along a shortest path and reads the metric out once as
``n_straight * res + n_diag * (res * sqrt(2))``. Candidate paths are
compared in integer arithmetic (a + b*sqrt(2) comparisons reduced to sign
tests), so the field is a pure function of the graph with no float
path-ordering artifacts.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import RewardError
from .worldsim import OccupancyGrid, Pose

SPARSE = "sparse"
EUCLIDEAN = "euclidean"
SHORTEST_PATH = "shortest_path"
VARIANTS = (SPARSE, EUCLIDEAN, SHORTEST_PATH)

# 8-neighborhood: (dix, djy, diagonal?)
NEIGHBORS = (
    (1, 0, False), (-1, 0, False), (0, 1, False), (0, -1, False),
    (1, 1, True), (1, -1, True), (-1, 1, True), (-1, -1, True),
)

_UNREACHED = np.iinfo(np.int64).max // 4


def _count_less(a_s: int, a_d: int, b_s: int, b_d: int) -> bool:
    """Exact test of a_s + a_d*sqrt(2) < b_s + b_d*sqrt(2) over integers."""
    p = a_s - b_s
    q = b_d - a_d
    if q == 0:
        return p < 0
    if q > 0:
        return p < 0 or p * p < 2 * q * q
    return p < 0 and p * p > 2 * q * q


@dataclass
class DistanceField:
    """Shortest-path-to-goal metric over the inflated grid, meters.

    ``dist`` is (height, width) bottom-up like the occupancy array, inf for
    cells the goal cannot reach (or that are blocked after inflation).
    """

    resolution: float
    dist: np.ndarray
    goal_cell: tuple
    inflate: float

    def value_at(self, x: float, y: float) -> float:
        """Metric at a world point: its cell, or the nearest finite cell
        within a small ring search when the cell is blocked/unreached."""
        res = self.resolution
        h, w = self.dist.shape
        ix = int(math.floor(x / res))
        jy = int(math.floor(y / res))
        if 0 <= ix < w and 0 <= jy < h and math.isfinite(self.dist[jy, ix]):
            return float(self.dist[jy, ix])
        best = math.inf
        best_d2 = math.inf
        for ring in range(1, 11):
            for dj in range(-ring, ring + 1):
                for di in range(-ring, ring + 1):
                    if max(abs(di), abs(dj)) != ring:
                        continue
                    ci, cj = ix + di, jy + dj
                    if 0 <= ci < w and 0 <= cj < h and math.isfinite(self.dist[cj, ci]):
                        cx, cy = (ci + 0.5) * res, (cj + 0.5) * res
                        d2 = (cx - x) ** 2 + (cy - y) ** 2
                        if d2 < best_d2:
                            best_d2 = d2
                            best = float(self.dist[cj, ci])
            if math.isfinite(best):
                return best
        return best

    def to_csv(self) -> str:
        """Row-major dump in file orientation (top row first); 'inf' marks
        unreachable cells."""
        out = []
        for row in self.dist[::-1]:
            out.append(",".join("inf" if not math.isfinite(v) else f"{v:.17g}" for v in row))
        return "\n".join(out) + "\n"


def counts_to_meters(n_straight: np.ndarray, n_diag: np.ndarray, resolution: float) -> np.ndarray:
    """Canonical readout used by both the field and its test oracle."""
    res_diag = resolution * math.sqrt(2.0)
    dist = n_straight.astype(np.float64) * resolution + n_diag.astype(np.float64) * res_diag
    dist[n_straight >= _UNREACHED] = np.inf
    return dist


def dijkstra_field(grid: OccupancyGrid, goal: Pose, inflate: float) -> DistanceField:
    """8-connected Dijkstra from the goal cell over cells that keep a disc of
    ``inflate`` clearance; edge costs are resolution and resolution*sqrt(2)."""
    passable = grid.clearance_mask(inflate)
    gix, gjy = grid.cell_of(goal.x, goal.y)
    if not grid.in_bounds(gix, gjy) or not passable[gjy, gix]:
        raise RewardError(
            f"goal cell ({gix}, {gjy}) is blocked after inflating by {inflate:.3g}"
        )
    h, w = passable.shape
    n_s = np.full((h, w), _UNREACHED, dtype=np.int64)
    n_d = np.full((h, w), _UNREACHED, dtype=np.int64)
    n_s[gjy, gix] = 0
    n_d[gjy, gix] = 0
    res_diag = grid.resolution * math.sqrt(2.0)
    heap = [(0.0, gix, gjy, 0, 0)]
    while heap:
        _, ix, jy, cs, cd = heapq.heappop(heap)
        if cs != n_s[jy, ix] or cd != n_d[jy, ix]:
            continue  # stale entry
        for di, dj, diag in NEIGHBORS:
            ni, nj = ix + di, jy + dj
            if not (0 <= ni < w and 0 <= nj < h) or not passable[nj, ni]:
                continue
            cand_s = cs + (0 if diag else 1)
            cand_d = cd + (1 if diag else 0)
            if _count_less(cand_s, cand_d, n_s[nj, ni], n_d[nj, ni]):
                n_s[nj, ni] = cand_s
                n_d[nj, ni] = cand_d
                key = cand_s * grid.resolution + cand_d * res_diag
                heapq.heappush(heap, (key, ni, nj, cand_s, cand_d))
    dist = counts_to_meters(n_s, n_d, grid.resolution)
    return DistanceField(
        resolution=grid.resolution, dist=dist, goal_cell=(gix, gjy), inflate=float(inflate)
    )


@dataclass
class RewardSpec:
    """Shaping definition for one episode (one goal)."""

    variant: str
    goal: Pose
    success_bonus: float = 10.0
    field: DistanceField | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise RewardError(f"unknown reward variant {self.variant!r}")
        if self.variant == SHORTEST_PATH and self.field is None:
            raise RewardError("shortest_path shaping needs a distance field")


def make_reward_spec(
    variant: str,
    grid: OccupancyGrid,
    goal: Pose,
    inflate: float,
    success_bonus: float = 10.0,
    field: DistanceField | None = None,
) -> RewardSpec:
    if variant == SHORTEST_PATH and field is None:
        field = dijkstra_field(grid, goal, inflate)
    return RewardSpec(variant=variant, goal=goal, success_bonus=success_bonus, field=field)


def d_of_state(spec: RewardSpec, pose: Pose) -> float:
    """Goal-distance metric d(s) used by the shaping term."""
    if spec.variant == SPARSE:
        return 0.0
    if spec.variant == EUCLIDEAN:
        return pose.distance_to(spec.goal)
    return spec.field.value_at(pose.x, pose.y)


def reward(spec: RewardSpec, s_prev: Pose, s_t: Pose, success: bool) -> float:
    if success:
        return spec.success_bonus
    return -(d_of_state(spec, s_t) - d_of_state(spec, s_prev))


def cost(crashed: bool) -> float:
    """Crash indicator; every crashing step pays 1."""
    return 1.0 if crashed else 0.0


def discounted_return(seq, gamma: float) -> float:
    """sum_t gamma^t seq[t], evaluated back-to-front."""
    total = 0.0
    for v in reversed(np.asarray(seq, dtype=np.float64)):
        total = v + gamma * total
    return float(total)
