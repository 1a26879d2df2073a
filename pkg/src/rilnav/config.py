"""Experiment configuration: a dataclass tree with an INI file round trip.

Every tunable named in the training recipe lives here so experiments are
reproducible from the file plus a seed. Unknown keys are rejected rather
than silently ignored.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field

from .demos import PursuitGains
from .errors import ConfigError
from .imitation import IlConfig
from .observation import CommandBox
from .rlcore import TrustRegionConfig
from .worldsim import SimConfig

OPTIMIZERS = ("cpo", "trpo")


@dataclass
class DemoGenConfig:
    lookahead: float = 0.5
    k_omega: float = 2.0
    clearance_margin: float = 0.1
    min_separation: float = 1.0
    step_cap: int = 600
    retry_factor: int = 20

    def gains(self) -> PursuitGains:
        return PursuitGains(lookahead=self.lookahead, k_omega=self.k_omega)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    optimizer: str = "cpo"
    reward: str = "shortest_path"
    rl_iterations: int = 100
    batch_size: int = 4000
    episode_cap: int = 400
    checkpoint_every: int = 25
    demo_count: int = 50
    il_maps: list = field(default_factory=list)
    rl_maps: list = field(default_factory=list)
    eval_maps: list = field(default_factory=list)
    eval_trials: int = 100
    eval_timeout: int = 1500
    min_separation: float = 1.0

    sim: SimConfig = field(default_factory=SimConfig)
    policy_hidden: tuple = (128, 128)
    value_hidden: tuple = (64, 64)
    dropout: float = 0.5
    std_scale: float = 0.25

    gamma: float = 0.99
    gamma_cost: float = 0.995
    success_bonus: float = 10.0
    inflate: float | None = None

    trust: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    il: IlConfig = field(default_factory=IlConfig)
    demos: DemoGenConfig = field(default_factory=DemoGenConfig)

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    def box(self) -> CommandBox:
        return CommandBox(v_max=self.sim.v_max, omega_max=self.sim.omega_max)

    def effective_inflate(self) -> float:
        return self.sim.robot_radius if self.inflate is None else self.inflate

    def trust_config(self) -> TrustRegionConfig:
        cfg = TrustRegionConfig(**vars(self.trust))
        cfg.gamma = self.gamma
        cfg.gamma_cost = self.gamma_cost
        return cfg

    def il_config(self) -> IlConfig:
        cfg = IlConfig(**vars(self.il))
        cfg.hidden = tuple(self.policy_hidden)
        cfg.dropout = self.dropout
        cfg.std_scale = self.std_scale
        cfg.seed = self.seed
        return cfg


# -- INI mapping ----------------------------------------------------------


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp["experiment"] = {
        "name": cfg.name,
        "seed": str(cfg.seed),
        "optimizer": cfg.optimizer,
        "reward": cfg.reward,
        "rl_iterations": str(cfg.rl_iterations),
        "batch_size": str(cfg.batch_size),
        "episode_cap": str(cfg.episode_cap),
        "checkpoint_every": str(cfg.checkpoint_every),
        "demo_count": str(cfg.demo_count),
        "il_maps": _fmt_value(cfg.il_maps),
        "rl_maps": _fmt_value(cfg.rl_maps),
        "eval_maps": _fmt_value(cfg.eval_maps),
        "eval_trials": str(cfg.eval_trials),
        "eval_timeout": str(cfg.eval_timeout),
        "min_separation": _fmt_value(cfg.min_separation),
    }
    cp["sim"] = {
        "dt": _fmt_value(cfg.sim.dt),
        "v_max": _fmt_value(cfg.sim.v_max),
        "omega_max": _fmt_value(cfg.sim.omega_max),
        "robot_radius": _fmt_value(cfg.sim.robot_radius),
        "goal_radius": _fmt_value(cfg.sim.goal_radius),
        "max_range": _fmt_value(cfg.sim.max_range),
        "beams": str(cfg.sim.beams),
        "fov_deg": _fmt_value(math.degrees(cfg.sim.fov)),
        "substeps": str(cfg.sim.substeps),
        "noise_std": _fmt_value(cfg.sim.noise_std),
    }
    cp["policy"] = {
        "hidden": _fmt_value(cfg.policy_hidden),
        "value_hidden": _fmt_value(cfg.value_hidden),
        "dropout": _fmt_value(cfg.dropout),
        "std_scale": _fmt_value(cfg.std_scale),
    }
    cp["reward"] = {
        "gamma": _fmt_value(cfg.gamma),
        "gamma_cost": _fmt_value(cfg.gamma_cost),
        "success_bonus": _fmt_value(cfg.success_bonus),
        "inflate": "" if cfg.inflate is None else _fmt_value(cfg.inflate),
    }
    cp["trust_region"] = {
        "delta": _fmt_value(cfg.trust.delta),
        "cg_iterations": str(cfg.trust.cg_iterations),
        "damping": _fmt_value(cfg.trust.damping),
        "backtrack_coef": _fmt_value(cfg.trust.backtrack_coef),
        "max_backtracks": str(cfg.trust.max_backtracks),
        "gae_lambda": _fmt_value(cfg.trust.gae_lambda),
        "alpha": _fmt_value(cfg.trust.alpha),
        "penalty_weight": _fmt_value(cfg.trust.penalty_weight),
        "cost_slack": _fmt_value(cfg.trust.cost_slack),
        "value_iterations": str(cfg.trust.value_iterations),
        "value_lr": _fmt_value(cfg.trust.value_lr),
    }
    cp["il"] = {
        "learning_rate": _fmt_value(cfg.il.learning_rate),
        "momentum": _fmt_value(cfg.il.momentum),
        "minibatch": str(cfg.il.minibatch),
        "iterations": str(cfg.il.iterations),
        "val_fraction": _fmt_value(cfg.il.val_fraction),
        "eval_every": str(cfg.il.eval_every),
    }
    cp["demos"] = {
        "lookahead": _fmt_value(cfg.demos.lookahead),
        "k_omega": _fmt_value(cfg.demos.k_omega),
        "clearance_margin": _fmt_value(cfg.demos.clearance_margin),
        "min_separation": _fmt_value(cfg.demos.min_separation),
        "step_cap": str(cfg.demos.step_cap),
        "retry_factor": str(cfg.demos.retry_factor),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(str(path), "w", encoding="ascii") as fh:
        fh.write(dump_config(cfg))


class _Section:
    """Typed, checked access to one INI section."""

    def __init__(self, cp: configparser.ConfigParser, name: str):
        self.name = name
        self.raw = dict(cp[name]) if cp.has_section(name) else {}
        self.used = set()

    def _take(self, key: str):
        self.used.add(key)
        return self.raw.get(key)

    def get_str(self, key, default):
        v = self._take(key)
        return default if v is None else v.strip()

    def get_int(self, key, default):
        v = self._take(key)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: expected integer, got {v!r}") from None

    def get_float(self, key, default):
        v = self._take(key)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: expected number, got {v!r}") from None

    def get_opt_float(self, key, default):
        v = self._take(key)
        if v is None:
            return default
        v = v.strip()
        if v == "":
            return None
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: expected number, got {v!r}") from None

    def get_list(self, key, default):
        v = self._take(key)
        if v is None:
            return list(default)
        v = v.strip()
        if not v:
            return []
        return [p.strip() for p in v.split(",") if p.strip()]

    def get_int_tuple(self, key, default):
        v = self._take(key)
        if v is None:
            return tuple(default)
        try:
            return tuple(int(p.strip()) for p in v.split(",") if p.strip())
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: expected integers, got {v!r}") from None

    def check_unknown(self):
        unknown = set(self.raw) - self.used
        if unknown:
            raise ConfigError(f"[{self.name}] unknown key(s): {', '.join(sorted(unknown))}")


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config syntax: {exc}") from None
    known = {"experiment", "sim", "policy", "reward", "trust_region", "il", "demos"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    d = ExperimentConfig()

    e = _Section(cp, "experiment")
    d.name = e.get_str("name", d.name)
    d.seed = e.get_int("seed", d.seed)
    d.optimizer = e.get_str("optimizer", d.optimizer)
    d.reward = e.get_str("reward", d.reward)
    d.rl_iterations = e.get_int("rl_iterations", d.rl_iterations)
    d.batch_size = e.get_int("batch_size", d.batch_size)
    d.episode_cap = e.get_int("episode_cap", d.episode_cap)
    d.checkpoint_every = e.get_int("checkpoint_every", d.checkpoint_every)
    d.demo_count = e.get_int("demo_count", d.demo_count)
    d.il_maps = e.get_list("il_maps", d.il_maps)
    d.rl_maps = e.get_list("rl_maps", d.rl_maps)
    d.eval_maps = e.get_list("eval_maps", d.eval_maps)
    d.eval_trials = e.get_int("eval_trials", d.eval_trials)
    d.eval_timeout = e.get_int("eval_timeout", d.eval_timeout)
    d.min_separation = e.get_float("min_separation", d.min_separation)
    e.check_unknown()

    s = _Section(cp, "sim")
    d.sim.dt = s.get_float("dt", d.sim.dt)
    d.sim.v_max = s.get_float("v_max", d.sim.v_max)
    d.sim.omega_max = s.get_float("omega_max", d.sim.omega_max)
    d.sim.robot_radius = s.get_float("robot_radius", d.sim.robot_radius)
    d.sim.goal_radius = s.get_float("goal_radius", d.sim.goal_radius)
    d.sim.max_range = s.get_float("max_range", d.sim.max_range)
    d.sim.beams = s.get_int("beams", d.sim.beams)
    d.sim.fov = math.radians(s.get_float("fov_deg", math.degrees(d.sim.fov)))
    d.sim.substeps = s.get_int("substeps", d.sim.substeps)
    d.sim.noise_std = s.get_float("noise_std", d.sim.noise_std)
    s.check_unknown()

    p = _Section(cp, "policy")
    d.policy_hidden = p.get_int_tuple("hidden", d.policy_hidden)
    d.value_hidden = p.get_int_tuple("value_hidden", d.value_hidden)
    d.dropout = p.get_float("dropout", d.dropout)
    d.std_scale = p.get_float("std_scale", d.std_scale)
    p.check_unknown()

    r = _Section(cp, "reward")
    d.gamma = r.get_float("gamma", d.gamma)
    d.gamma_cost = r.get_float("gamma_cost", d.gamma_cost)
    d.success_bonus = r.get_float("success_bonus", d.success_bonus)
    d.inflate = r.get_opt_float("inflate", d.inflate)
    r.check_unknown()

    t = _Section(cp, "trust_region")
    d.trust.delta = t.get_float("delta", d.trust.delta)
    d.trust.cg_iterations = t.get_int("cg_iterations", d.trust.cg_iterations)
    d.trust.damping = t.get_float("damping", d.trust.damping)
    d.trust.backtrack_coef = t.get_float("backtrack_coef", d.trust.backtrack_coef)
    d.trust.max_backtracks = t.get_int("max_backtracks", d.trust.max_backtracks)
    d.trust.gae_lambda = t.get_float("gae_lambda", d.trust.gae_lambda)
    d.trust.alpha = t.get_float("alpha", d.trust.alpha)
    d.trust.penalty_weight = t.get_float("penalty_weight", d.trust.penalty_weight)
    d.trust.cost_slack = t.get_float("cost_slack", d.trust.cost_slack)
    d.trust.value_iterations = t.get_int("value_iterations", d.trust.value_iterations)
    d.trust.value_lr = t.get_float("value_lr", d.trust.value_lr)
    t.check_unknown()

    i = _Section(cp, "il")
    d.il.learning_rate = i.get_float("learning_rate", d.il.learning_rate)
    d.il.momentum = i.get_float("momentum", d.il.momentum)
    d.il.minibatch = i.get_int("minibatch", d.il.minibatch)
    d.il.iterations = i.get_int("iterations", d.il.iterations)
    d.il.val_fraction = i.get_float("val_fraction", d.il.val_fraction)
    d.il.eval_every = i.get_int("eval_every", d.il.eval_every)
    i.check_unknown()

    g = _Section(cp, "demos")
    d.demos.lookahead = g.get_float("lookahead", d.demos.lookahead)
    d.demos.k_omega = g.get_float("k_omega", d.demos.k_omega)
    d.demos.clearance_margin = g.get_float("clearance_margin", d.demos.clearance_margin)
    d.demos.min_separation = g.get_float("min_separation", d.demos.min_separation)
    d.demos.step_cap = g.get_int("step_cap", d.demos.step_cap)
    d.demos.retry_factor = g.get_int("retry_factor", d.demos.retry_factor)
    g.check_unknown()

    if d.optimizer not in OPTIMIZERS:
        raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {d.optimizer!r}")
    return d


def load_config(path) -> ExperimentConfig:
    try:
        with open(str(path), "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
