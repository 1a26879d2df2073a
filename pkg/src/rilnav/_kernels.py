"""Compiled kernels for the hot geometry paths.

Everything here is plain scalar math over the occupancy array so numba can
compile it. The occupancy array convention throughout is ``occ[jy, ix]`` with
``jy`` counting rows from the *bottom* of the world, so world coordinates map
to indices without a flip: ``ix = floor(x / res)``, ``jy = floor(y / res)``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def ray_range(occ, res, x0, y0, dx, dy, max_range):
    """Distance from (x0, y0) along unit direction (dx, dy) to the first
    occupied cell, clamped to max_range.

    Walks the exact sequence of cells the ray crosses (no sampling) and
    returns the distance at which the ray *enters* the first occupied cell.
    Returns -1.0 when the start cell is occupied or out of bounds; callers
    treat that as an error.
    """
    h, w = occ.shape
    ix = int(math.floor(x0 / res))
    jy = int(math.floor(y0 / res))
    if ix < 0 or ix >= w or jy < 0 or jy >= h:
        return -1.0
    if occ[jy, ix]:
        return -1.0

    step_x = 0
    t_max_x = math.inf
    t_delta_x = math.inf
    if dx > 0.0:
        step_x = 1
        t_max_x = ((ix + 1) * res - x0) / dx
        t_delta_x = res / dx
    elif dx < 0.0:
        step_x = -1
        t_max_x = (ix * res - x0) / dx
        t_delta_x = -res / dx

    step_y = 0
    t_max_y = math.inf
    t_delta_y = math.inf
    if dy > 0.0:
        step_y = 1
        t_max_y = ((jy + 1) * res - y0) / dy
        t_delta_y = res / dy
    elif dy < 0.0:
        step_y = -1
        t_max_y = (jy * res - y0) / dy
        t_delta_y = -res / dy

    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            ix += step_x
            t_max_x += t_delta_x
        else:
            t = t_max_y
            jy += step_y
            t_max_y += t_delta_y
        if t >= max_range:
            return max_range
        if ix < 0 or ix >= w or jy < 0 or jy >= h:
            # Open edge; only reachable on maps without a closed boundary.
            return max_range
        if occ[jy, ix]:
            return t


@njit(cache=True)
def scan_ranges(occ, res, x, y, theta, fov, max_range, out):
    """Fill ``out`` with ranges for beams spread evenly across ``fov``.

    Beam i points at theta - fov/2 + i * fov/(n-1). Returns False when the
    sensor origin sits in an occupied cell.
    """
    n = out.shape[0]
    step = fov / (n - 1)
    start = theta - 0.5 * fov
    for i in range(n):
        b = start + i * step
        r = ray_range(occ, res, x, y, math.cos(b), math.sin(b), max_range)
        if r < 0.0:
            return False
        out[i] = r
    return True


@njit(cache=True)
def disc_hits_obstacle(occ, res, x, y, radius):
    """True when a disc at (x, y) overlaps any occupied cell.

    Uses the closest point of each candidate cell rectangle; touching
    exactly at distance == radius does not count as a hit.
    """
    h, w = occ.shape
    r2 = radius * radius
    ix0 = int(math.floor((x - radius) / res))
    ix1 = int(math.floor((x + radius) / res))
    jy0 = int(math.floor((y - radius) / res))
    jy1 = int(math.floor((y + radius) / res))
    if ix0 < 0:
        ix0 = 0
    if jy0 < 0:
        jy0 = 0
    if ix1 > w - 1:
        ix1 = w - 1
    if jy1 > h - 1:
        jy1 = h - 1
    for jy in range(jy0, jy1 + 1):
        cy0 = jy * res
        cy1 = cy0 + res
        if y < cy0:
            py = cy0
        elif y > cy1:
            py = cy1
        else:
            py = y
        for ix in range(ix0, ix1 + 1):
            if occ[jy, ix]:
                cx0 = ix * res
                cx1 = cx0 + res
                if x < cx0:
                    px = cx0
                elif x > cx1:
                    px = cx1
                else:
                    px = x
                ddx = px - x
                ddy = py - y
                if ddx * ddx + ddy * ddy < r2:
                    return True
    return False


@njit(cache=True)
def clearance_mask(occ, res, radius, out):
    """Mark free cells whose center keeps a disc of ``radius`` obstacle-free."""
    h, w = occ.shape
    for jy in range(h):
        for ix in range(w):
            if occ[jy, ix]:
                out[jy, ix] = False
            else:
                cx = (ix + 0.5) * res
                cy = (jy + 0.5) * res
                out[jy, ix] = not disc_hits_obstacle(occ, res, cx, cy, radius)
