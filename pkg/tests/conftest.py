"""Shared fixtures. The heavier artifacts (demo sets, cloned policies) are
session scoped so the imitation, RL and harness tests reuse one build."""

import numpy as np
import pytest

from rilnav import demos, imitation, mapgen, observation, worldsim


def make_room(width_m=6.0, height_m=6.0, resolution=0.1, name="room"):
    return mapgen.empty_map(width_m, height_m, resolution=resolution, name=name)


def grid_from_ascii(art: str, resolution=0.1, name="ascii"):
    """Build a grid from indented ASCII art ('#' occupied, '.' free)."""
    rows = [ln.strip() for ln in art.strip().splitlines()]
    text = (
        f"{worldsim.MAP_MAGIC}\n{len(rows[0])} {len(rows)} {resolution:.17g}\n"
        + "\n".join(rows)
        + "\n"
    )
    return worldsim.parse_map(text, name=name)


@pytest.fixture(scope="session")
def room():
    """Empty 6 m x 6 m room at 0.1 m resolution."""
    return make_room()


@pytest.fixture(scope="session")
def cluttered():
    """8 m x 8 m room with scattered rectangular blocks."""
    return mapgen.scatter_map(8.0, 8.0, resolution=0.1, seed=12, name="cluttered")


@pytest.fixture(scope="session")
def sim_cfg():
    return worldsim.SimConfig()


@pytest.fixture(scope="session")
def box():
    return observation.CommandBox()


@pytest.fixture(scope="session")
def room_demoset(room, sim_cfg):
    """Ten expert demonstrations on the empty room."""
    return demos.generate_demoset([room], 10, seed=2024, cfg=sim_cfg)


@pytest.fixture(scope="session")
def cloned_policy(room_demoset, box):
    """Behavior-cloned policy used by closed-loop and RL warm-start tests."""
    cfg = imitation.IlConfig(iterations=6000, hidden=(64, 64), eval_every=500, seed=7)
    params, report = imitation.train_il(room_demoset, cfg, box)
    return params, report


@pytest.fixture()
def rng():
    return np.random.default_rng(123)
