"""Behavior cloning: regress the policy mean onto expert commands.

The loss is mean squared error in the normalized command space (expert
commands mapped through the inverse of the output de-normalization), averaged
over the minibatch and both command dimensions. Only the mean network trains
here; the log-stds are left exactly as initialized for the RL phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .demos import DemoSet
from .errors import TrainError
from .observation import CommandBox, normalize_command
from .policy import MlpParams, grad_scalar, init_policy, make_dropout_mask
from .worldsim import as_generator


@dataclass
class IlConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    minibatch: int = 64
    iterations: int = 20000
    dropout: float = 0.5
    val_fraction: float = 0.1
    hidden: tuple = (128, 128)
    std_scale: float = 0.25
    eval_every: int = 200
    seed: int = 0


@dataclass
class IlReport:
    """Loss curve sampled every ``eval_every`` iterations (eval mode, no
    dropout), plus the iteration indices the samples were taken at."""

    iterations: list = field(default_factory=list)
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["iteration,train_loss,val_loss"]
        for it, tr, va in zip(self.iterations, self.train_losses, self.val_losses):
            lines.append(f"{it},{tr:.17g},{va:.17g}")
        return "\n".join(lines) + "\n"


def _mse_fn(targets: np.ndarray, box: CommandBox):
    """Functional for grad_scalar: MSE between the normalized mean and the
    normalized expert command."""
    scale = box.scale
    offset = box.offset

    def fn(mean, log_std):
        t = (mean - offset) / scale
        diff = t - targets
        n = diff.size
        value = float(np.sum(diff * diff) / n)
        dmean = (2.0 / n) * diff / scale
        return value, dmean, np.zeros_like(log_std)

    return fn


def bc_loss(
    params: MlpParams,
    box: CommandBox,
    obs: np.ndarray,
    commands: np.ndarray,
    dropout_mask: np.ndarray | None = None,
) -> float:
    loss, _ = bc_loss_and_grad(params, box, obs, commands, dropout_mask)
    return loss


def bc_loss_and_grad(
    params: MlpParams,
    box: CommandBox,
    obs: np.ndarray,
    commands: np.ndarray,
    dropout_mask: np.ndarray | None = None,
):
    """Loss plus its exact gradient. With ``dropout_mask=None`` this is the
    deterministic eval-mode loss; passing a mask reproduces the noisy
    training objective for that mask."""
    targets = normalize_command(np.asarray(commands, dtype=np.float64), box)
    return grad_scalar(params, box, obs, _mse_fn(targets, box), dropout_mask=dropout_mask)


def train_il(
    demoset: DemoSet,
    config: IlConfig,
    box: CommandBox,
    init: MlpParams | None = None,
) -> tuple[MlpParams, IlReport]:
    """SGD with momentum on the cloning loss.

    Deterministic given the config seed; the validation split is drawn once
    up front. Raises TrainError on empty data or a non-finite loss.
    """
    obs, cmds = demoset.arrays()
    if obs.shape[0] == 0:
        raise TrainError("demo set has no steps to train on")
    if not 0.0 <= config.val_fraction < 1.0:
        raise TrainError(f"val_fraction must be in [0, 1), got {config.val_fraction}")
    rng = as_generator(config.seed)
    perm = rng.permutation(obs.shape[0])
    n_val = int(round(config.val_fraction * obs.shape[0]))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        raise TrainError("validation split leaves no training data")
    obs_tr, cmd_tr = obs[train_idx], cmds[train_idx]
    obs_va, cmd_va = obs[val_idx], cmds[val_idx]

    params = init if init is not None else init_policy(
        rng, box, obs_dim=obs.shape[1], hidden=tuple(config.hidden),
        dropout_rate=config.dropout, std_scale=config.std_scale,
    )
    params = params.copy()
    log_std0 = params.log_std.copy()
    h1 = params.sizes[1]

    velocity = None
    report = IlReport()

    def record(it: int) -> None:
        tr, _ = bc_loss_and_grad(params, box, obs_tr, cmd_tr)
        if obs_va.shape[0] > 0:
            va, _ = bc_loss_and_grad(params, box, obs_va, cmd_va)
        else:
            va = float("nan")
        report.iterations.append(it)
        report.train_losses.append(tr)
        report.val_losses.append(va)

    from .policy import flat_params, unflatten_params

    record(0)
    theta = flat_params(params)
    for it in range(1, config.iterations + 1):
        idx = rng.integers(obs_tr.shape[0], size=min(config.minibatch, obs_tr.shape[0]))
        mask = make_dropout_mask(rng, idx.size, h1, config.dropout)
        loss, grad = bc_loss_and_grad(params, box, obs_tr[idx], cmd_tr[idx], dropout_mask=mask)
        if not np.isfinite(loss):
            raise TrainError(f"cloning loss diverged at iteration {it}")
        if velocity is None:
            velocity = np.zeros_like(grad)
        velocity = config.momentum * velocity - config.learning_rate * grad
        theta = theta + velocity
        params = unflatten_params(params, theta)
        # The cloning objective never touches the exploration scale.
        params.log_std[:] = log_std0
        if it % config.eval_every == 0 or it == config.iterations:
            record(it)
    return params, report
