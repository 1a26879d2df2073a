"""Map-less target-driven navigation: expert demos, behavior cloning, and
trust-region RL with an explicit crash-rate constraint."""

from .config import ExperimentConfig, load_config, save_config
from .demos import DemoSet, Demonstration, generate_demoset, load_demoset, save_demoset
from .errors import (
    CheckpointError,
    ConfigError,
    DemoError,
    MapError,
    PlanError,
    PolicyError,
    RewardError,
    RilnavError,
    SimError,
    TrainError,
)
from .harness import EvalSet, EvalTrial, evaluate, export_trajectories, run_training
from .imitation import IlConfig, train_il
from .observation import OBS_DIM, CommandBox, build_observation
from .policy import MlpParams, forward, init_policy, load_checkpoint, save_checkpoint
from .rewards import DistanceField, RewardSpec, dijkstra_field, make_reward_spec
from .rlcore import EnvBundle, TrustRegionConfig, collect_batch, cpo_step, trpo_step
from .worldsim import LidarScan, OccupancyGrid, Pose, SimConfig, load_map, save_map, scan, step

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "CommandBox",
    "ConfigError",
    "DemoError",
    "DemoSet",
    "Demonstration",
    "DistanceField",
    "EnvBundle",
    "EvalSet",
    "EvalTrial",
    "ExperimentConfig",
    "IlConfig",
    "LidarScan",
    "MapError",
    "MlpParams",
    "OBS_DIM",
    "OccupancyGrid",
    "PlanError",
    "PolicyError",
    "Pose",
    "RewardError",
    "RewardSpec",
    "RilnavError",
    "SimConfig",
    "SimError",
    "TrainError",
    "TrustRegionConfig",
    "build_observation",
    "collect_batch",
    "cpo_step",
    "dijkstra_field",
    "evaluate",
    "export_trajectories",
    "forward",
    "generate_demoset",
    "init_policy",
    "load_checkpoint",
    "load_config",
    "load_demoset",
    "load_map",
    "make_reward_spec",
    "run_training",
    "save_checkpoint",
    "save_config",
    "save_demoset",
    "save_map",
    "scan",
    "step",
    "train_il",
    "trpo_step",
]
