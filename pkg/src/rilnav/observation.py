"""Observation pipeline: 1080 ranges -> 36 pooled slots, plus goal distance
and bearing, everything normalized to [-1, 1].

Slot layout: [0..35] pooled ranges, [36] goal distance (same normalization as
ranges), [37] bearing / pi. Near means +1, far means -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SimError
from .worldsim import LidarScan, Pose, wrap_angle

OBS_DIM = 38
POOL_FACTOR = 30


@dataclass(frozen=True)
class CommandBox:
    """Command limits and the affine map between normalized network outputs
    and (v, omega): v = v_max * (a0 + 1) / 2, omega = omega_max * a1."""

    v_max: float = 0.5
    omega_max: float = 1.0

    @property
    def scale(self) -> np.ndarray:
        return np.array([self.v_max / 2.0, self.omega_max])

    @property
    def offset(self) -> np.ndarray:
        return np.array([self.v_max / 2.0, 0.0])


def min_pool(ranges: np.ndarray, k: int = POOL_FACTOR) -> np.ndarray:
    """Minimum over consecutive windows of k beams."""
    ranges = np.asarray(ranges, dtype=np.float64)
    if ranges.ndim != 1 or ranges.size == 0 or ranges.size % k != 0:
        raise SimError(f"cannot pool {ranges.size} beams by windows of {k}")
    return ranges.reshape(-1, k).min(axis=1)


def normalize_range(y, r_max: float):
    """Map a range in [0, inf) to [-1, 1]: 2 * (1 - min(y, r_max)/r_max) - 1."""
    y = np.minimum(y, r_max)
    return 2.0 * (1.0 - y / r_max) - 1.0


def build_observation(scan: LidarScan, robot: Pose, goal: Pose) -> np.ndarray:
    """38-dim observation vector for one simulator state."""
    pooled = min_pool(scan.ranges, POOL_FACTOR)
    obs = np.empty(OBS_DIM, dtype=np.float64)
    obs[: pooled.size] = normalize_range(pooled, scan.max_range)
    dx = goal.x - robot.x
    dy = goal.y - robot.y
    d = math.hypot(dx, dy)
    obs[36] = normalize_range(d, scan.max_range)
    if d == 0.0:
        bearing = 0.0
    else:
        bearing = wrap_angle(math.atan2(dy, dx) - robot.theta)
    obs[37] = bearing / math.pi
    return obs


def normalize_command(command: np.ndarray, box: CommandBox) -> np.ndarray:
    """Map (v, omega) into the normalized [-1, 1] output space."""
    command = np.asarray(command, dtype=np.float64)
    return (command - box.offset) / box.scale


def denormalize_action(action: np.ndarray, box: CommandBox) -> np.ndarray:
    """Map a normalized action to (v, omega), clamping into [-1, 1] first."""
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    return box.offset + box.scale * a
