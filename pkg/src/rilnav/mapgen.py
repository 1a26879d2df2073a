"""Procedural training/eval maps.

All generators return closed-boundary grids and guarantee that the cells a
robot-sized disc can occupy form one connected region, so sampled start/goal
pairs are always mutually reachable.
"""

from __future__ import annotations

import inspect
from collections import deque

import numpy as np

from .errors import MapError
from .worldsim import OccupancyGrid, grid_from_occ


def _connected(mask: np.ndarray) -> bool:
    """True when the eligible cells form a single 8-connected component."""
    idx = np.argwhere(mask)
    if idx.shape[0] == 0:
        return False
    seen = np.zeros(mask.shape, dtype=bool)
    start = (int(idx[0][0]), int(idx[0][1]))
    seen[start] = True
    queue = deque([start])
    h, w = mask.shape
    while queue:
        j, i = queue.popleft()
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                nj, ni = j + dj, i + di
                if 0 <= nj < h and 0 <= ni < w and mask[nj, ni] and not seen[nj, ni]:
                    seen[nj, ni] = True
                    queue.append((nj, ni))
    return bool(seen[mask].all())


def _shell(width_m: float, height_m: float, resolution: float) -> np.ndarray:
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    if w < 3 or h < 3:
        raise MapError(f"map {width_m}x{height_m} too small for resolution {resolution}")
    occ = np.zeros((h, w), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    return occ


def empty_map(width_m: float, height_m: float, resolution: float = 0.1, name: str = "empty") -> OccupancyGrid:
    return grid_from_occ(_shell(width_m, height_m, resolution), resolution, name=name)


def _fill_rect(occ: np.ndarray, x0: float, y0: float, x1: float, y1: float, res: float) -> None:
    h, w = occ.shape
    i0 = max(0, int(np.floor(x0 / res)))
    i1 = min(w - 1, int(np.floor(x1 / res)))
    j0 = max(0, int(np.floor(y0 / res)))
    j1 = min(h - 1, int(np.floor(y1 / res)))
    occ[j0 : j1 + 1, i0 : i1 + 1] = True


def scatter_map(
    width_m: float,
    height_m: float,
    resolution: float = 0.1,
    seed: int = 0,
    blocks: int = 6,
    block_min: float = 0.4,
    block_max: float = 1.0,
    clearance: float = 0.28,
    name: str = "scatter",
) -> OccupancyGrid:
    """Random rectangular obstacles; retries sub-seeds until the clearance-
    eligible region stays connected and reasonably large."""
    if min(width_m, height_m) < 2.0 * (block_max + 2.0 * clearance) + block_max:
        raise MapError(
            f"map {width_m} x {height_m} m too small for blocks up to "
            f"{block_max} m with clearance {clearance} m"
        )
    for trial in range(64):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), trial])))
        occ = _shell(width_m, height_m, resolution)
        margin = block_max + 2.0 * clearance
        for _ in range(blocks):
            bw = rng.uniform(block_min, block_max)
            bh = rng.uniform(block_min, block_max)
            x0 = rng.uniform(margin, width_m - margin - bw)
            y0 = rng.uniform(margin, height_m - margin - bh)
            _fill_rect(occ, x0, y0, x0 + bw, y0 + bh, resolution)
        grid = grid_from_occ(occ, resolution, name=name)
        mask = grid.clearance_mask(clearance)
        free = int((~occ).sum())
        if free > 0 and mask.sum() >= 0.4 * free and _connected(mask):
            return grid
    raise MapError(f"could not scatter a connected map for seed {seed}")


def walls_map(
    width_m: float,
    height_m: float,
    resolution: float = 0.1,
    seed: int = 0,
    gap: float = 1.2,
    thickness: float = 0.2,
    name: str = "walls",
) -> OccupancyGrid:
    """Two interior walls with door gaps; gap positions come from the seed."""
    for trial in range(64):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), trial])))
        occ = _shell(width_m, height_m, resolution)
        # Vertical wall with a gap.
        wx = width_m * rng.uniform(0.38, 0.52)
        gy = rng.uniform(gap, height_m - 2.0 * gap)
        _fill_rect(occ, wx, 0.0, wx + thickness, gy, resolution)
        _fill_rect(occ, wx, gy + gap, wx + thickness, height_m, resolution)
        # Horizontal wall with a gap, only spanning one side of the vertical.
        wy = height_m * rng.uniform(0.55, 0.7)
        gx = rng.uniform(wx + thickness + gap, width_m - gap) if wx + thickness + 2.5 * gap < width_m else width_m * 0.75
        _fill_rect(occ, wx + thickness, wy, gx - gap / 2.0, wy + thickness, resolution)
        _fill_rect(occ, gx + gap / 2.0, wy, width_m, wy + thickness, resolution)
        grid = grid_from_occ(occ, resolution, name=name)
        if _connected(grid.clearance_mask(0.28)):
            return grid
    raise MapError(f"could not build a connected walls map for seed {seed}")


KINDS = {"empty": empty_map, "scatter": scatter_map, "walls": walls_map}


def generate(kind: str, **kwargs) -> OccupancyGrid:
    """Build a map by kind name; keyword arguments the kind does not take
    (and None values) are dropped, so callers can pass a uniform set."""
    if kind not in KINDS:
        raise MapError(f"unknown map kind {kind!r}; choose from {sorted(KINDS)}")
    builder = KINDS[kind]
    accepted = set(inspect.signature(builder).parameters)
    kwargs = {k: v for k, v in kwargs.items() if k in accepted and v is not None}
    return builder(**kwargs)
