"""On-policy trust-region RL: rollout collection, advantage estimation and
the TRPO / CPO update rules.

Both optimizers share the same machinery: generalized advantage estimation
on top of two small value networks (one for reward, one for crash cost),
exact surrogate gradients through the policy, and conjugate-gradient solves
against Fisher-vector products. TRPO folds the crash cost into the reward as
a fixed penalty; CPO keeps it as a separate constraint J_C <= alpha solved
through the analytic two-variable dual of the trust-region subproblem, with
a pure cost-decrease recovery step when the constraint cannot be met inside
the trust region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import observation as obs_mod
from .errors import RewardError, SimError, TrainError
from .net import NetParams, flatten_net, glorot_init, net_backward, net_forward, unflatten_net
from .observation import CommandBox, build_observation
from .policy import (
    MlpParams,
    fisher_vector_product,
    flat_params,
    forward,
    grad_scalar,
    kl_mean,
    log_prob,
    unflatten_params,
)
from .rewards import RewardSpec, cost, discounted_return, make_reward_spec, reward
from .worldsim import OccupancyGrid, Pose, SimConfig, as_generator, sample_free_pose, scan, step

OUTCOME_SUCCESS = "success"
OUTCOME_CAP = "cap"


@dataclass
class TrustRegionConfig:
    delta: float = 0.01
    cg_iterations: int = 10
    damping: float = 0.1
    backtrack_coef: float = 0.8
    max_backtracks: int = 10
    gamma: float = 0.99
    gamma_cost: float = 0.995
    gae_lambda: float = 0.95
    alpha: float = 0.4
    penalty_weight: float = 1.0
    cost_slack: float = 1.0
    value_iterations: int = 80
    value_lr: float = 1e-2


@dataclass
class RolloutBatch:
    """Flat per-step arrays plus per-episode bookkeeping.

    ``actions`` are the raw Gaussian samples (before the command-box clamp),
    ``log_probs`` their densities under the sampling distribution, and
    ``poses`` the post-step poses so costs and shaping can be recomputed
    from the log alone.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    dones: np.ndarray
    episode_ids: np.ndarray
    poses: np.ndarray
    ep_start: np.ndarray
    ep_goal: np.ndarray
    ep_map: np.ndarray
    ep_outcome: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0]

    @property
    def n_episodes(self) -> int:
        return self.ep_map.shape[0]

    def episode_slices(self) -> list:
        bounds = np.flatnonzero(self.dones) + 1
        starts = np.concatenate([[0], bounds[:-1]])
        return [slice(int(a), int(b)) for a, b in zip(starts, bounds)]

    def episode_returns(self) -> np.ndarray:
        return np.array([self.rewards[s].sum() for s in self.episode_slices()])

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.ep_outcome == OUTCOME_SUCCESS))

    @property
    def crash_rate(self) -> float:
        """Fraction of episodes containing at least one crash step."""
        return float(np.mean([self.costs[s].sum() > 0 for s in self.episode_slices()]))

    @property
    def mean_return(self) -> float:
        return float(self.episode_returns().mean())


@dataclass
class EnvBundle:
    """Everything collect_batch needs: the maps, simulator constants and the
    shaping recipe. Distance fields are cached per (map, goal cell)."""

    grids: list
    sim: SimConfig
    reward_variant: str
    inflate: float | None = None
    success_bonus: float = 10.0
    sample_clearance: float | None = None
    min_separation: float = 1.0
    _fields: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.inflate is None:
            self.inflate = self.sim.robot_radius
        if self.sample_clearance is None:
            self.sample_clearance = self.sim.robot_radius

    def reward_spec_for(self, map_idx: int, goal: Pose) -> RewardSpec:
        grid = self.grids[map_idx]
        key = (map_idx, grid.cell_of(goal.x, goal.y))
        fld = self._fields.get(key)
        spec = make_reward_spec(
            self.reward_variant, grid, goal, self.inflate,
            success_bonus=self.success_bonus, field=fld,
        )
        if spec.field is not None and key not in self._fields:
            if len(self._fields) > 256:
                self._fields.clear()
            self._fields[key] = spec.field
        return spec

    def sample_pair(self, map_idx: int, rng) -> tuple:
        """Start/goal with clearance, minimum separation and (when a field
        exists) reachability."""
        grid = self.grids[map_idx]
        for _ in range(200):
            start = sample_free_pose(grid, rng, self.sample_clearance)
            goal = sample_free_pose(grid, rng, self.sample_clearance)
            if start.distance_to(goal) < self.min_separation:
                continue
            if self.reward_variant == "shortest_path":
                try:
                    spec = self.reward_spec_for(map_idx, goal)
                except RewardError:
                    continue
                if not math.isfinite(spec.field.value_at(start.x, start.y)):
                    continue
            return start, goal
        raise SimError(f"could not sample a start/goal pair on map {grid.name!r}")


def collect_batch(
    bundle: EnvBundle,
    params: MlpParams,
    box: CommandBox,
    batch_size: int,
    episode_cap: int,
    seed: int,
) -> RolloutBatch:
    """Roll the stochastic policy until at least ``batch_size`` steps.

    Episodes end on goal arrival or at the step cap; crashes cancel the
    translation but the episode continues. The final episode always runs to
    its own termination, so the batch can overshoot batch_size by up to
    episode_cap - 1 steps. Every episode draws from its own (seed, index)
    stream, which makes the batch a pure function of the arguments.
    """
    if batch_size < episode_cap:
        raise TrainError(
            f"batch_size ({batch_size}) must be at least episode_cap ({episode_cap})"
        )
    obs_rows, act_rows, logp_rows, rew_rows, cost_rows, done_rows, ep_rows, pose_rows = (
        [], [], [], [], [], [], [], []
    )
    ep_start, ep_goal, ep_map, ep_outcome = [], [], [], []
    noise = bundle.sim.noise_std > 0.0
    ep = 0
    total = 0
    while total < batch_size:
        rng = as_generator(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, ep]))
        map_idx = int(rng.integers(len(bundle.grids)))
        grid = bundle.grids[map_idx]
        start, goal = bundle.sample_pair(map_idx, rng)
        spec = bundle.reward_spec_for(map_idx, goal)
        pose = start
        cur_scan = scan(grid, pose, bundle.sim, rng if noise else None)
        outcome = OUTCOME_CAP
        t_end = 0
        for t in range(episode_cap):
            ob = build_observation(cur_scan, pose, goal)
            dist = forward(params, box, ob)
            action = dist.mean + dist.std * rng.standard_normal(2)
            lp = float(log_prob(dist, action)[0])
            out = step(grid, pose, (action[0], action[1]), goal, bundle.sim, rng if noise else None)
            obs_rows.append(ob)
            act_rows.append(action)
            logp_rows.append(lp)
            rew_rows.append(reward(spec, pose, out.pose, out.reached_goal))
            cost_rows.append(cost(out.crashed))
            done_rows.append(False)
            ep_rows.append(ep)
            pose_rows.append((out.pose.x, out.pose.y, out.pose.theta))
            pose = out.pose
            cur_scan = out.scan
            t_end = t
            if out.reached_goal:
                outcome = OUTCOME_SUCCESS
                break
        done_rows[-1] = True
        ep_start.append((start.x, start.y, start.theta))
        ep_goal.append((goal.x, goal.y))
        ep_map.append(map_idx)
        ep_outcome.append(outcome)
        total += t_end + 1
        ep += 1
    return RolloutBatch(
        obs=np.asarray(obs_rows),
        actions=np.asarray(act_rows),
        log_probs=np.asarray(logp_rows),
        rewards=np.asarray(rew_rows),
        costs=np.asarray(cost_rows),
        dones=np.asarray(done_rows, dtype=bool),
        episode_ids=np.asarray(ep_rows, dtype=np.int64),
        poses=np.asarray(pose_rows),
        ep_start=np.asarray(ep_start),
        ep_goal=np.asarray(ep_goal),
        ep_map=np.asarray(ep_map, dtype=np.int64),
        ep_outcome=np.asarray(ep_outcome),
    )


# -- advantage estimation -------------------------------------------------


def gae_advantages(rewards, values, dones, gamma: float, lam: float):
    """Generalized advantage estimation over flat arrays with episode
    boundaries marked in ``dones``; terminal states bootstrap value 0.
    Returns (advantages, regression targets)."""
    n = rewards.shape[0]
    adv = np.empty(n, dtype=np.float64)
    last = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            last = rewards[t] - values[t]
        else:
            delta = rewards[t] + gamma * values[t + 1] - values[t]
            last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


def estimate_jc(batch: RolloutBatch, gamma_cost: float) -> float:
    """Mean per-episode discounted cost return (the constraint statistic)."""
    vals = [discounted_return(batch.costs[s], gamma_cost) for s in batch.episode_slices()]
    return float(np.mean(vals))


# -- value networks -------------------------------------------------------


@dataclass
class ValueNets:
    reward_net: NetParams
    cost_net: NetParams


def init_value_nets(rng: np.random.Generator, obs_dim: int = 38, hidden: tuple = (64, 64)) -> ValueNets:
    sizes = (obs_dim,) + tuple(hidden) + (1,)
    return ValueNets(glorot_init(rng, sizes), glorot_init(rng, sizes))


def value_forward(netp: NetParams, obs: np.ndarray) -> np.ndarray:
    y, _ = net_forward(netp, np.asarray(obs, dtype=np.float64), out_tanh=False)
    return y[:, 0]


def fit_value(netp: NetParams, obs: np.ndarray, targets: np.ndarray, iterations: int, lr: float) -> NetParams:
    """Full-batch gradient descent on the squared regression error."""
    netp = netp.copy()
    n = obs.shape[0]
    theta = flatten_net(netp)
    for _ in range(iterations):
        y, cache = net_forward(netp, obs, out_tanh=False)
        gy = (2.0 / n) * (y - targets[:, None])
        gws, gbs = net_backward(netp, cache, gy)
        grad = np.concatenate(
            [np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(gws, gbs)]
        )
        theta = theta - lr * grad
        netp = unflatten_net(netp, theta)
    return netp


def value_loss_and_grad(netp: NetParams, obs: np.ndarray, targets: np.ndarray):
    """Mean squared error and its exact gradient (for gradient checks)."""
    n = obs.shape[0]
    y, cache = net_forward(netp, obs, out_tanh=False)
    diff = y[:, 0] - targets
    loss = float(np.mean(diff * diff))
    gws, gbs = net_backward(netp, cache, (2.0 / n) * diff[:, None])
    grad = np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(gws, gbs)])
    return loss, grad


# -- trust-region machinery ----------------------------------------------


def conjugate_gradient(matvec, b: np.ndarray, iterations: int, residual_tol: float = 1e-12) -> np.ndarray:
    """Plain CG for SPD systems; returns the best iterate."""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rdotr = float(r @ r)
    for _ in range(iterations):
        if rdotr < residual_tol:
            break
        z = matvec(p)
        pz = float(p @ z)
        if pz <= 0.0:
            break  # numerical loss of positive-definiteness
        a = rdotr / pz
        x = x + a * p
        r = r - a * z
        new = float(r @ r)
        p = r + (new / rdotr) * p
        rdotr = new
    return x


def surrogate_fn(actions: np.ndarray, old_logp: np.ndarray, adv: np.ndarray):
    """grad_scalar functional for L = mean(ratio * advantage)."""
    n = actions.shape[0]

    def fn(mean, log_std):
        std = np.exp(log_std)
        z = (actions - mean) / std
        logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - float(np.log(2.0 * np.pi))
        ratio = np.exp(logp - old_logp)
        value = float(np.mean(ratio * adv))
        w = (ratio * adv)[:, None] / n
        dmean = w * (z / std)
        dlog_std = np.sum(w * (z * z - 1.0), axis=0)
        return value, dmean, dlog_std

    return fn


def surrogate_value(
    params: MlpParams, box: CommandBox, obs, actions, old_logp, adv
) -> float:
    dist = forward(params, box, obs)
    logp = log_prob(dist, actions)
    return float(np.mean(np.exp(logp - old_logp) * adv))


@dataclass
class UpdateReport:
    iteration: int = 0
    mean_return: float = 0.0
    success_rate: float = 0.0
    crash_rate: float = 0.0
    jc: float = 0.0
    kl: float = 0.0
    step_accepted: bool = False
    surrogate_improvement: float = 0.0
    optim_case: str = ""
    cost_surrogate: float = 0.0
    backtracks: int = 0


def _batch_stats(batch: RolloutBatch, jc: float) -> UpdateReport:
    return UpdateReport(
        mean_return=batch.mean_return,
        success_rate=batch.success_rate,
        crash_rate=batch.crash_rate,
        jc=jc,
    )


def _refit(values: ValueNets, batch: RolloutBatch, targets, cost_targets, cfg: TrustRegionConfig) -> ValueNets:
    return ValueNets(
        fit_value(values.reward_net, batch.obs, targets, cfg.value_iterations, cfg.value_lr),
        fit_value(values.cost_net, batch.obs, cost_targets, cfg.value_iterations, cfg.value_lr),
    )


def _natural_step(v_g: np.ndarray, fvp, delta: float) -> np.ndarray:
    shs = float(v_g @ fvp(v_g))
    if shs <= 0.0:
        return np.zeros_like(v_g)
    return math.sqrt(2.0 * delta / shs) * v_g


def trpo_step(
    params: MlpParams,
    box: CommandBox,
    values: ValueNets,
    batch: RolloutBatch,
    cfg: TrustRegionConfig,
):
    """One fixed-penalty trust-region update.

    The crash cost enters as reward - penalty_weight * cost; advantages are
    normalized; the step is the natural gradient scaled to the KL radius with
    backtracking that requires both the KL bound and surrogate improvement.
    Returns (new params, refit value nets, report).
    """
    rewards_eff = batch.rewards - cfg.penalty_weight * batch.costs
    v = value_forward(values.reward_net, batch.obs)
    adv, targets = gae_advantages(rewards_eff, v, batch.dones, cfg.gamma, cfg.gae_lambda)
    adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
    vc = value_forward(values.cost_net, batch.obs)
    _, cost_targets = gae_advantages(batch.costs, vc, batch.dones, cfg.gamma_cost, cfg.gae_lambda)

    jc = estimate_jc(batch, cfg.gamma_cost)
    report = _batch_stats(batch, jc)
    report.optim_case = "trpo"

    l_old, g = grad_scalar(
        params, box, batch.obs, surrogate_fn(batch.actions, batch.log_probs, adv_n)
    )
    new_params = params
    if float(g @ g) > 1e-20:
        fvp = lambda u: fisher_vector_product(params, box, batch.obs, u, cfg.damping)
        v_g = conjugate_gradient(fvp, g, cfg.cg_iterations)
        full = _natural_step(v_g, fvp, cfg.delta)
        theta0 = flat_params(params)
        coef = 1.0
        for k in range(cfg.max_backtracks + 1):
            cand = unflatten_params(params, theta0 + coef * full)
            kl = kl_mean(params, cand, box, batch.obs)
            l_new = surrogate_value(cand, box, batch.obs, batch.actions, batch.log_probs, adv_n)
            if kl <= cfg.delta and l_new > l_old:
                new_params = cand
                report.step_accepted = True
                report.kl = kl
                report.surrogate_improvement = l_new - l_old
                report.backtracks = k
                break
            coef *= cfg.backtrack_coef
    new_values = _refit(values, batch, targets, cost_targets, cfg)
    return new_params, new_values, report


def solve_cpo_dual(q: float, r: float, s: float, c: float, delta: float):
    """Optimal multipliers for: max g.x st x.Fx/2 <= delta, c + b.x <= 0,
    given q = g.F^-1.g, r = g.F^-1.b, s = b.F^-1.b.

    Returns (lam, nu). The dual over lam > 0, nu >= 0 is piecewise: with
    nu(lam) = (r + lam*c)/s clipped at zero, the nu = 0 piece has value
    q/(2 lam) + lam delta and the active piece A/(2 lam) + lam B/2 - rc/s,
    A = q - r^2/s, B = 2 delta - c^2/s. Each piece is minimized in closed
    form, projected onto its validity interval, and the lower value wins.
    """
    eps = 1e-12
    s = max(s, eps)
    a_coef = max(q - r * r / s, 0.0)
    b_coef = 2.0 * delta - c * c / s

    # Validity intervals for lam: nu=0 piece needs r + lam*c <= 0, the
    # active piece the opposite.
    lam_sw = -r / c if c != 0.0 else None
    if c > 0.0:
        int0 = (eps, lam_sw) if r < 0.0 else None
        intb = (max(eps, lam_sw if lam_sw is not None else eps), math.inf)
    elif c < 0.0:
        int0 = (max(eps, lam_sw), math.inf)
        intb = (eps, lam_sw) if lam_sw > eps else None
    else:
        int0 = (eps, math.inf) if r <= 0.0 else None
        intb = (eps, math.inf) if r > 0.0 else None

    def clamp(x, lohi):
        lo, hi = lohi
        return min(max(x, lo), hi if hi is not None else math.inf)

    cands = []
    if int0 is not None:
        lam = clamp(math.sqrt(max(q, eps) / (2.0 * delta)), int0)
        cands.append((q / (2.0 * lam) + lam * delta, lam))
    if intb is not None and b_coef > eps:
        lam = clamp(math.sqrt(a_coef / b_coef) if a_coef > 0 else eps, intb)
        cands.append((a_coef / (2.0 * lam) + lam * b_coef / 2.0 - r * c / s, lam))
    if not cands:
        lam = math.sqrt(max(q, eps) / (2.0 * delta))
    else:
        lam = min(cands)[1]
    lam = max(lam, eps)
    nu = max(0.0, (r + lam * c) / s)
    return lam, nu


def cpo_step(
    params: MlpParams,
    box: CommandBox,
    values: ValueNets,
    batch: RolloutBatch,
    cfg: TrustRegionConfig,
):
    """One constrained trust-region update against J_C <= alpha.

    Reward advantages are normalized; cost advantages are left in their
    natural scale so the constraint slack keeps meaning. When the linearized
    constraint cannot be satisfied inside the trust region the update falls
    back to the pure cost-decrease recovery direction -sqrt(2 delta / s)
    F^-1 b. Backtracking accepts a candidate only if the KL stays inside the
    region, the cost surrogate stays within the constraint slack and, when
    starting feasible, the reward surrogate improves.
    """
    v = value_forward(values.reward_net, batch.obs)
    adv, targets = gae_advantages(batch.rewards, v, batch.dones, cfg.gamma, cfg.gae_lambda)
    adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
    vc = value_forward(values.cost_net, batch.obs)
    adv_c, cost_targets = gae_advantages(batch.costs, vc, batch.dones, cfg.gamma_cost, cfg.gae_lambda)

    jc = estimate_jc(batch, cfg.gamma_cost)
    c = jc - cfg.alpha
    report = _batch_stats(batch, jc)

    l_old, g = grad_scalar(
        params, box, batch.obs, surrogate_fn(batch.actions, batch.log_probs, adv_n)
    )
    _, b = grad_scalar(
        params, box, batch.obs, surrogate_fn(batch.actions, batch.log_probs, adv_c)
    )
    fvp = lambda u: fisher_vector_product(params, box, batch.obs, u, cfg.damping)

    tiny_g = float(g @ g) <= 1e-20
    tiny_b = float(b @ b) <= 1e-20
    if tiny_g and (tiny_b or c <= 0.0):
        report.optim_case = "no-gradient"
        return params, _refit(values, batch, targets, cost_targets, cfg), report

    recovery = False
    if tiny_b:
        if c > 0.0:
            # Constraint violated but the cost signal has no local slope.
            report.optim_case = "stuck"
            return params, _refit(values, batch, targets, cost_targets, cfg), report
        v_g = conjugate_gradient(fvp, g, cfg.cg_iterations)
        full = _natural_step(v_g, fvp, cfg.delta)
        report.optim_case = "unconstrained"
    else:
        v_g = conjugate_gradient(fvp, g, cfg.cg_iterations) if not tiny_g else np.zeros_like(g)
        v_b = conjugate_gradient(fvp, b, cfg.cg_iterations)
        q = float(g @ v_g)
        r = float(g @ v_b)
        s = float(b @ v_b)
        if s <= 1e-16:
            if c > 0.0:
                report.optim_case = "stuck"
                return params, _refit(values, batch, targets, cost_targets, cfg), report
            full = _natural_step(v_g, fvp, cfg.delta)
            report.optim_case = "unconstrained"
        elif c > 0.0 and c * c / s > 2.0 * cfg.delta:
            # Infeasible inside the trust region: pure recovery.
            full = -math.sqrt(2.0 * cfg.delta / s) * v_b
            recovery = True
            report.optim_case = "recovery"
        elif c < 0.0 and c * c / s > 2.0 * cfg.delta:
            # Whole trust region is feasible: plain natural step.
            full = _natural_step(v_g, fvp, cfg.delta)
            report.optim_case = "unconstrained"
        else:
            lam, nu = solve_cpo_dual(q, r, s, c, cfg.delta)
            full = (v_g - nu * v_b) / lam
            report.optim_case = "boundary"

    need_improvement = c <= 0.0 and not recovery
    cost_bound = max(0.0, -c) * cfg.cost_slack + 1e-12
    # Surrogates at the old parameters (ratios are exactly one there); the
    # slack bound applies to the change, not the absolute value, because the
    # unnormalized cost advantages do not average to zero.
    cost_l_old = float(np.mean(adv_c))
    theta0 = flat_params(params)
    new_params = params
    coef = 1.0
    for k in range(cfg.max_backtracks + 1):
        cand = unflatten_params(params, theta0 + coef * full)
        kl = kl_mean(params, cand, box, batch.obs)
        cost_surr = surrogate_value(cand, box, batch.obs, batch.actions, batch.log_probs, adv_c)
        l_new = surrogate_value(cand, box, batch.obs, batch.actions, batch.log_probs, adv_n)
        ok = kl <= cfg.delta and cost_surr - cost_l_old <= cost_bound
        if ok and need_improvement:
            ok = l_new > l_old
        if ok:
            new_params = cand
            report.step_accepted = True
            report.kl = kl
            report.surrogate_improvement = l_new - l_old
            report.cost_surrogate = cost_surr - cost_l_old
            report.backtracks = k
            break
        coef *= cfg.backtrack_coef
    new_values = _refit(values, batch, targets, cost_targets, cfg)
    return new_params, new_values, report
