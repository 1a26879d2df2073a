"""Observation pipeline tests: windowed-min pooling against a brute-force
oracle, the range normalization formula, goal encoding, and the command
box affine maps."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rilnav.errors import SimError
from rilnav.observation import (
    OBS_DIM,
    POOL_FACTOR,
    CommandBox,
    build_observation,
    denormalize_action,
    min_pool,
    normalize_command,
    normalize_range,
)
from rilnav.worldsim import LidarScan, Pose

R_MAX = 30.0


def make_scan(ranges):
    ranges = np.asarray(ranges, dtype=np.float64)
    return LidarScan(ranges=ranges, fov=1.5 * math.pi, max_range=R_MAX)


def pool_oracle(ranges, k):
    """Naive per-window loop."""
    out = []
    for i in range(0, len(ranges), k):
        out.append(min(ranges[i : i + k]))
    return np.array(out)


class TestMinPool:
    def test_constant_input(self):
        out = min_pool(np.full(1080, 30.0), 30)
        assert out.shape == (36,)
        assert np.all(out == 30.0)

    def test_single_dip_lands_in_first_window(self):
        r = np.full(1080, 30.0)
        r[17] = 1.2
        out = min_pool(r, 30)
        assert out[0] == 1.2
        assert np.all(out[1:] == 30.0)

    def test_brute_force_oracle_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            r = rng.uniform(0.05, 30.0, size=1080)
            assert np.array_equal(min_pool(r, 30), pool_oracle(list(r), 30))

    def test_indivisible_length_rejected(self):
        with pytest.raises(SimError, match="cannot pool"):
            min_pool(np.ones(1000), 30)

    @given(
        hnp.arrays(
            np.float64,
            st.integers(1, 8).map(lambda n: n * 6),
            elements=st.floats(0.0, 100.0),
        )
    )
    def test_permutation_within_window_invariant(self, r):
        base = min_pool(r, 6)
        rng = np.random.default_rng(0)
        shuffled = r.reshape(-1, 6).copy()
        for row in shuffled:
            rng.shuffle(row)
        assert np.array_equal(min_pool(shuffled.reshape(-1), 6), base)


class TestNormalizeRange:
    def test_pinned_formula_values(self):
        assert normalize_range(30.0, R_MAX) == -1.0
        assert normalize_range(0.0, R_MAX) == 1.0
        assert normalize_range(15.0, R_MAX) == 0.0

    def test_beyond_crop_clamps(self):
        assert normalize_range(45.0, R_MAX) == -1.0
        assert normalize_range(1e9, R_MAX) == -1.0

    def test_matches_closed_form(self):
        rng = np.random.default_rng(9)
        for y in rng.uniform(0.0, 60.0, size=500):
            expect = 2.0 * (1.0 - min(y, R_MAX) / R_MAX) - 1.0
            assert normalize_range(float(y), R_MAX) == expect

    @given(st.floats(0.0, 100.0), st.floats(0.0, 100.0))
    def test_monotone_nonincreasing(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert normalize_range(lo, R_MAX) >= normalize_range(hi, R_MAX)

    @given(st.floats(0.0, 1e6))
    def test_bounded(self, y):
        assert -1.0 <= normalize_range(y, R_MAX) <= 1.0


class TestBuildObservation:
    def test_shape_and_bounds(self):
        rng = np.random.default_rng(3)
        s = make_scan(rng.uniform(0.1, 30.0, size=1080))
        obs = build_observation(s, Pose(1.0, 2.0, 0.3), Pose(4.0, 4.0))
        assert obs.shape == (OBS_DIM,)
        assert np.all(obs >= -1.0) and np.all(obs <= 1.0)

    def test_pooled_slots_match_pipeline(self):
        rng = np.random.default_rng(4)
        r = rng.uniform(0.1, 30.0, size=1080)
        obs = build_observation(make_scan(r), Pose(0.0, 0.0, 0.0), Pose(1.0, 0.0))
        pooled = pool_oracle(list(r), POOL_FACTOR)
        expect = 2.0 * (1.0 - np.minimum(pooled, R_MAX) / R_MAX) - 1.0
        assert np.array_equal(obs[:36], expect)

    def test_goal_coincident(self):
        s = make_scan(np.full(1080, 30.0))
        p = Pose(2.0, 2.0, 0.7)
        obs = build_observation(s, p, Pose(2.0, 2.0))
        assert obs[36] == 1.0
        assert obs[37] == 0.0

    def test_goal_thirty_meters_ahead(self):
        s = make_scan(np.full(1080, 30.0))
        obs = build_observation(s, Pose(0.0, 0.0, 0.0), Pose(30.0, 0.0))
        assert obs[36] == -1.0
        assert obs[37] == 0.0

    def test_goal_fifteen_meters_behind(self):
        s = make_scan(np.full(1080, 30.0))
        obs = build_observation(s, Pose(20.0, 5.0, 0.0), Pose(5.0, 5.0))
        assert obs[36] == 0.0
        assert obs[37] == 1.0

    def test_bearing_left_is_positive(self):
        s = make_scan(np.full(1080, 30.0))
        obs = build_observation(s, Pose(0.0, 0.0, 0.0), Pose(0.0, 3.0))
        assert obs[37] == pytest.approx(0.5)

    def test_bearing_uses_robot_frame(self):
        s = make_scan(np.full(1080, 30.0))
        obs = build_observation(s, Pose(0.0, 0.0, math.pi / 2), Pose(0.0, 3.0))
        assert obs[37] == pytest.approx(0.0)


class TestCommandBox:
    def test_default_geometry(self):
        box = CommandBox()
        assert np.array_equal(box.scale, [0.25, 1.0])
        assert np.array_equal(box.offset, [0.25, 0.0])

    def test_denormalize_endpoints(self):
        box = CommandBox()
        assert np.allclose(denormalize_action(np.array([1.0, 0.0]), box), [0.5, 0.0])
        assert np.allclose(denormalize_action(np.array([-1.0, -1.0]), box), [0.0, -1.0])

    def test_denormalize_clamps_outliers(self):
        box = CommandBox()
        assert np.allclose(denormalize_action(np.array([3.0, 0.0]), box), [0.5, 0.0])
        assert np.allclose(denormalize_action(np.array([-9.0, 2.5]), box), [0.0, 1.0])

    @given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
    def test_affine_bijection_roundtrip(self, a0, a1):
        box = CommandBox()
        cmd = denormalize_action(np.array([a0, a1]), box)
        back = normalize_command(cmd, box)
        assert np.allclose(back, [a0, a1], atol=1e-12)
        assert 0.0 <= cmd[0] <= box.v_max
        assert -box.omega_max <= cmd[1] <= box.omega_max

    def test_custom_limits(self):
        box = CommandBox(v_max=2.0, omega_max=0.5)
        assert np.array_equal(box.scale, [1.0, 0.5])
        assert np.allclose(denormalize_action(np.array([0.0, 1.0]), box), [1.0, 0.5])
