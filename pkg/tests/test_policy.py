"""Gaussian policy tests.

The heavy lifts here are the derivative oracles: every analytic gradient is
checked against central finite differences, and the matrix-free Fisher
product is checked against a dense Hessian of the mean KL assembled by
finite-differencing an exact KL gradient. Small nets keep this fast."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rilnav.errors import CheckpointError, PolicyError
from rilnav.net import NetParams
from rilnav.observation import CommandBox
from rilnav.policy import (
    LOG_2PI,
    MlpParams,
    entropy,
    fisher_vector_product,
    flat_params,
    forward,
    grad_scalar,
    init_policy,
    kl_mean,
    load_checkpoint,
    log_prob,
    make_dropout_mask,
    save_checkpoint,
    unflatten_params,
)

BOX = CommandBox()


def zero_params(sizes, log_std=(0.0, 0.0)):
    weights = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    return MlpParams(NetParams(weights, biases), np.array(log_std, dtype=np.float64))


def small_policy(seed, sizes=(5, 8, 8, 2), log_std=None, box=BOX):
    rng = np.random.default_rng(seed)
    params = init_policy(rng, box, obs_dim=sizes[0], hidden=sizes[1:-1], dropout_rate=0.0)
    if log_std is not None:
        params.log_std[:] = log_std
    return params


def nll_functional(actions):
    """Mean log-likelihood of a fixed action batch, with exact derivatives
    w.r.t. the de-normalized mean and the shared log-stds."""
    actions = np.asarray(actions, dtype=np.float64)

    def fn(mean, log_std):
        std = np.exp(log_std)
        z = (actions - mean) / std
        value = np.mean(-0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - LOG_2PI)
        n = mean.shape[0]
        dmean = (z / std) / n
        dlog = np.mean(z * z - 1.0, axis=0)
        return value, dmean, dlog

    return fn


def kl_functional(mean_old, log_std_old):
    """Mean KL(old || new) as a functional of the new distribution, with
    exact derivatives. Feeding this to grad_scalar gives the exact KL
    gradient in parameter space."""
    mean_old = np.atleast_2d(np.asarray(mean_old, dtype=np.float64))
    var_old = np.exp(2.0 * np.asarray(log_std_old, dtype=np.float64))

    def fn(mean, log_std):
        var_new = np.exp(2.0 * log_std)
        diff = mean - mean_old
        per = (log_std - log_std_old) + (var_old + diff**2) / (2.0 * var_new) - 0.5
        value = np.mean(np.sum(per, axis=-1))
        n = mean.shape[0]
        dmean = diff / var_new / n
        dlog = np.mean(1.0 - (var_old + diff**2) / var_new, axis=0)
        return value, dmean, dlog

    return fn


class TestForward:
    def test_zero_net_mean_is_box_center(self):
        params = zero_params((38, 16, 2))
        obs = np.random.default_rng(1).uniform(-1, 1, size=38)
        dist = forward(params, BOX, obs)
        assert np.array_equal(dist.mean, [0.25, 0.0])
        assert np.array_equal(dist.std, [1.0, 1.0])

    def test_single_matches_batch_row(self):
        params = small_policy(2)
        obs = np.random.default_rng(3).uniform(-1, 1, size=(4, 5))
        batch = forward(params, BOX, obs).mean
        for i in range(4):
            single = forward(params, BOX, obs[i]).mean
            assert single.shape == (2,)
            assert np.allclose(single, batch[i], rtol=0.0, atol=1e-12)

    def test_eval_mode_ignores_dropout(self):
        rng = np.random.default_rng(4)
        params = init_policy(rng, BOX, obs_dim=5, hidden=(8,), dropout_rate=0.5)
        obs = rng.uniform(-1, 1, size=(3, 5))
        a = forward(params, BOX, obs).mean
        b = forward(params, BOX, obs, mode="eval", rng=np.random.default_rng(99)).mean
        assert np.array_equal(a, b)

    def test_train_il_needs_rng_when_dropping(self):
        params = init_policy(np.random.default_rng(5), BOX, obs_dim=5, hidden=(8,), dropout_rate=0.5)
        obs = np.zeros((2, 5))
        with pytest.raises(PolicyError, match="rng"):
            forward(params, BOX, obs, mode="train-il")

    def test_explicit_mask_reproducible(self):
        rng = np.random.default_rng(6)
        params = init_policy(rng, BOX, obs_dim=5, hidden=(8, 8), dropout_rate=0.5)
        obs = rng.uniform(-1, 1, size=(3, 5))
        mask = make_dropout_mask(np.random.default_rng(7), 3, 8, 0.5)
        a = forward(params, BOX, obs, mode="train-il", dropout_mask=mask).mean
        b = forward(params, BOX, obs, mode="train-il", dropout_mask=mask).mean
        assert np.array_equal(a, b)

    def test_unknown_mode_rejected(self):
        params = small_policy(8)
        with pytest.raises(PolicyError, match="mode"):
            forward(params, BOX, np.zeros(5), mode="test")

    def test_wrong_obs_dim_rejected(self):
        params = small_policy(9)
        with pytest.raises(PolicyError, match="input dim"):
            forward(params, BOX, np.zeros(7))

    def test_mean_inside_command_box(self):
        params = small_policy(10, sizes=(5, 32, 2))
        obs = np.random.default_rng(11).uniform(-5, 5, size=(50, 5))
        mean = forward(params, BOX, obs).mean
        assert np.all(mean[:, 0] >= 0.0) and np.all(mean[:, 0] <= BOX.v_max)
        assert np.all(np.abs(mean[:, 1]) <= BOX.omega_max)


class TestLogProb:
    def test_at_mean_unit_std(self):
        params = zero_params((4, 6, 2), log_std=(0.0, 0.0))
        dist = forward(params, BOX, np.zeros(4))
        lp = log_prob(dist, dist.mean)
        assert lp.shape == (1,)
        assert lp[0] == pytest.approx(-LOG_2PI, abs=1e-15)

    def test_one_sigma_shift_both_dims(self):
        params = zero_params((4, 6, 2), log_std=(0.3, -0.2))
        dist = forward(params, BOX, np.zeros(4))
        action = dist.mean + dist.std
        expect = -1.0 - (0.3 - 0.2) - LOG_2PI
        assert log_prob(dist, action)[0] == pytest.approx(expect, abs=1e-15)

    def test_density_integrates_to_one(self):
        params = small_policy(12, log_std=np.log([0.0625, 0.25]))
        obs = np.random.default_rng(13).uniform(-1, 1, size=5)
        dist = forward(params, BOX, obs)
        axes = [np.linspace(m - 8 * s, m + 8 * s, 481) for m, s in zip(dist.mean, dist.std)]
        aa, bb = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([aa.ravel(), bb.ravel()], axis=-1)
        p = np.exp(log_prob(dist, pts))
        da = axes[0][1] - axes[0][0]
        db = axes[1][1] - axes[1][0]
        assert float(p.sum() * da * db) == pytest.approx(1.0, abs=1e-3)

    def test_symmetric_about_mean(self):
        params = small_policy(14)
        dist = forward(params, BOX, np.zeros(5))
        delta = np.array([0.03, -0.4])
        assert log_prob(dist, dist.mean + delta)[0] == pytest.approx(
            log_prob(dist, dist.mean - delta)[0], abs=1e-14
        )


class TestEntropy:
    def test_closed_form(self):
        params = zero_params((3, 4, 2), log_std=(0.5, -1.0))
        dist = forward(params, BOX, np.zeros(3))
        assert entropy(dist) == pytest.approx(0.5 - 1.0 + 1.0 + LOG_2PI, abs=1e-14)

    def test_matches_monte_carlo(self):
        params = small_policy(15, log_std=(0.1, -0.3))
        dist = forward(params, BOX, np.zeros(5))
        rng = np.random.default_rng(16)
        samples = dist.mean + dist.std * rng.standard_normal((200_000, 2))
        assert -np.mean(log_prob(dist, samples)) == pytest.approx(entropy(dist), abs=5e-3)


class TestKl:
    def test_self_kl_is_exactly_zero(self):
        params = small_policy(17)
        obs = np.random.default_rng(18).uniform(-1, 1, size=(20, 5))
        assert kl_mean(params, params, BOX, obs) == 0.0

    def test_scale_std_by_e(self):
        params = small_policy(19)
        wider = params.copy()
        wider.log_std += 1.0
        obs = np.random.default_rng(20).uniform(-1, 1, size=(10, 5))
        expect = 2.0 * (1.0 + 0.5 / math.e**2 - 0.5)
        assert kl_mean(params, wider, BOX, obs) == pytest.approx(expect, abs=1e-12)

    def test_matches_monte_carlo(self):
        p_old = small_policy(21, log_std=(-1.5, -0.8))
        p_new = small_policy(22, log_std=(-1.3, -1.0))
        obs = np.random.default_rng(23).uniform(-1, 1, size=5)
        d_old = forward(p_old, BOX, obs)
        d_new = forward(p_new, BOX, obs)
        rng = np.random.default_rng(24)
        s = d_old.mean + d_old.std * rng.standard_normal((1_000_000, 2))
        mc = float(np.mean(log_prob(d_old, s) - log_prob(d_new, s)))
        assert kl_mean(p_old, p_new, BOX, obs) == pytest.approx(mc, abs=1e-2)

    def test_nonnegative_under_perturbation(self):
        base = small_policy(25)
        obs = np.random.default_rng(26).uniform(-1, 1, size=(8, 5))
        theta = flat_params(base)
        rng = np.random.default_rng(27)
        for _ in range(25):
            other = unflatten_params(base, theta + 0.1 * rng.standard_normal(theta.size))
            assert kl_mean(base, other, BOX, obs) >= 0.0

    @given(
        st.floats(-2.0, 2.0),
        st.floats(-2.0, 2.0),
        st.floats(-1.0, 1.0),
        st.floats(-1.0, 1.0),
    )
    @settings(max_examples=40, deadline=None)
    def test_nonnegative_property(self, dl0, dl1, db0, db1):
        base = zero_params((3, 4, 2))
        other = base.copy()
        other.log_std += np.array([dl0, dl1])
        other.net.biases[-1] += np.array([db0, db1])
        obs = np.linspace(-1, 1, 12).reshape(4, 3)
        assert kl_mean(base, other, BOX, obs) >= 0.0


class TestGradients:
    def fd_value(self, template, obs, fn, theta, eps, j):
        e = np.zeros_like(theta)
        e[j] = eps
        vp, _ = grad_scalar(unflatten_params(template, theta + e), BOX, obs, fn)
        vm, _ = grad_scalar(unflatten_params(template, theta - e), BOX, obs, fn)
        return (vp - vm) / (2.0 * eps)

    def test_log_prob_grad_matches_central_differences(self):
        params = small_policy(28, sizes=(5, 8, 8, 2))
        rng = np.random.default_rng(29)
        obs = rng.uniform(-1, 1, size=(6, 5))
        actions = forward(params, BOX, obs).mean + 0.3 * rng.standard_normal((6, 2))
        fn = nll_functional(actions)
        _, grad = grad_scalar(params, BOX, obs, fn)
        theta = flat_params(params)
        coords = rng.choice(theta.size, size=25, replace=False)
        for j in coords:
            fd = self.fd_value(params, obs, fn, theta, 1e-5, j)
            assert abs(fd - grad[j]) <= 1e-4 * max(1.0, abs(grad[j]))

    def test_log_std_grad_at_mean_action(self):
        params = small_policy(30)
        obs = np.random.default_rng(31).uniform(-1, 1, size=(7, 5))
        actions = forward(params, BOX, obs).mean
        _, grad = grad_scalar(params, BOX, obs, nll_functional(actions))
        n_net = params.net.n_params
        assert np.array_equal(grad[n_net:], [-1.0, -1.0])
        assert np.array_equal(grad[:n_net], np.zeros(n_net))

    def test_kl_grad_vanishes_at_old_params(self):
        params = small_policy(32)
        obs = np.random.default_rng(33).uniform(-1, 1, size=(5, 5))
        dist = forward(params, BOX, obs)
        value, grad = grad_scalar(params, BOX, obs, kl_functional(dist.mean, dist.log_std))
        assert value == 0.0
        assert np.max(np.abs(grad)) == 0.0

    def test_kl_grad_matches_central_differences(self):
        params = small_policy(34)
        rng = np.random.default_rng(35)
        obs = rng.uniform(-1, 1, size=(6, 5))
        dist = forward(params, BOX, obs)
        fn = kl_functional(dist.mean + 0.1, dist.log_std - 0.2)
        _, grad = grad_scalar(params, BOX, obs, fn)
        theta = flat_params(params)
        for j in rng.choice(theta.size, size=20, replace=False):
            fd = self.fd_value(params, obs, fn, theta, 1e-5, j)
            assert abs(fd - grad[j]) <= 1e-4 * max(1.0, abs(grad[j]))


class TestFisher:
    def setup_method(self):
        self.params = small_policy(36, sizes=(3, 4, 2), log_std=(-0.6, -0.1))
        self.obs = np.random.default_rng(37).uniform(-1, 1, size=(6, 3))
        self.n = flat_params(self.params).size

    def dense_fd_kl_hessian(self, eps=1e-5):
        """Hessian of kl_mean(theta_old, .) at theta_old, column by column,
        by central-differencing the exact KL gradient."""
        dist = forward(self.params, BOX, self.obs)
        fn = kl_functional(dist.mean, dist.log_std)
        theta = flat_params(self.params)
        hess = np.empty((self.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = eps
            _, gp = grad_scalar(unflatten_params(self.params, theta + e), BOX, self.obs, fn)
            _, gm = grad_scalar(unflatten_params(self.params, theta - e), BOX, self.obs, fn)
            hess[:, j] = (gp - gm) / (2.0 * eps)
        return hess

    def test_quadratic_form_matches_kl_curvature(self):
        rng = np.random.default_rng(38)
        theta = flat_params(self.params)
        for _ in range(10):
            v = rng.standard_normal(self.n)
            v /= np.linalg.norm(v)
            quad = float(v @ fisher_vector_product(self.params, BOX, self.obs, v))
            eps = 1e-4
            kl = kl_mean(
                self.params,
                unflatten_params(self.params, theta + eps * v),
                BOX,
                self.obs,
            )
            assert quad == pytest.approx(2.0 * kl / eps**2, rel=1e-3, abs=1e-9)

    def test_matches_dense_hessian(self):
        hess = self.dense_fd_kl_hessian()
        dense_f = np.empty((self.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = 1.0
            dense_f[:, j] = fisher_vector_product(self.params, BOX, self.obs, e)
        assert np.linalg.norm(dense_f - hess) <= 1e-3 * np.linalg.norm(hess)
        assert np.allclose(hess, hess.T, atol=1e-6)

    def test_symmetric_bilinear_form(self):
        rng = np.random.default_rng(39)
        u = rng.standard_normal(self.n)
        v = rng.standard_normal(self.n)
        uv = u @ fisher_vector_product(self.params, BOX, self.obs, v)
        vu = v @ fisher_vector_product(self.params, BOX, self.obs, u)
        assert uv == pytest.approx(vu, rel=1e-10)

    def test_damping_gives_strict_positive_definiteness(self):
        rng = np.random.default_rng(40)
        for _ in range(10):
            v = rng.standard_normal(self.n)
            quad = v @ fisher_vector_product(self.params, BOX, self.obs, v, damping=0.1)
            assert quad >= 0.1 * float(v @ v) - 1e-12

    def test_log_std_block_is_two(self):
        v = np.zeros(self.n)
        v[-2:] = [1.0, -3.0]
        out = fisher_vector_product(self.params, BOX, self.obs, v)
        assert np.array_equal(out[-2:], [2.0, -6.0])
        assert np.array_equal(out[:-2], np.zeros(self.n - 2))

    def test_wrong_length_rejected(self):
        with pytest.raises(PolicyError, match="length"):
            fisher_vector_product(self.params, BOX, self.obs, np.zeros(self.n + 3))


class TestFlattening:
    def test_roundtrip_bitwise(self):
        params = small_policy(41)
        vec = flat_params(params)
        back = unflatten_params(params, vec)
        assert np.array_equal(flat_params(back), vec)
        for w0, w1 in zip(params.net.weights, back.net.weights):
            assert np.array_equal(w0, w1)

    def test_wrong_size_rejected(self):
        params = small_policy(42)
        with pytest.raises(PolicyError, match="size"):
            unflatten_params(params, np.zeros(params.n_params - 1))


class TestCheckpoints:
    def test_roundtrip_bitwise(self, tmp_path):
        params = small_policy(43, sizes=(38, 128, 128, 2))
        path = tmp_path / "p.rilnet1"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path, dropout_rate=0.5)
        assert loaded.sizes == params.sizes
        assert loaded.dropout_rate == 0.5
        assert np.array_equal(flat_params(loaded), flat_params(params))

    def test_resave_identical_bytes(self, tmp_path):
        params = small_policy(44)
        a, b = tmp_path / "a.rilnet1", tmp_path / "b.rilnet1"
        save_checkpoint(params, a)
        save_checkpoint(load_checkpoint(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rilnet1"
        path.write_bytes(b"NOTANET0" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="bad magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        params = small_policy(45)
        path = tmp_path / "t.rilnet1"
        save_checkpoint(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_data(self, tmp_path):
        params = small_policy(46)
        path = tmp_path / "x.rilnet1"
        save_checkpoint(params, path)
        path.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_expect_sizes_mismatch(self, tmp_path):
        params = small_policy(47, sizes=(5, 8, 2))
        path = tmp_path / "s.rilnet1"
        save_checkpoint(params, path)
        with pytest.raises(CheckpointError, match="sizes"):
            load_checkpoint(path, expect_sizes=(38, 128, 128, 2))
        assert load_checkpoint(path, expect_sizes=(5, 8, 2)).sizes == (5, 8, 2)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(tmp_path / "nope.rilnet1")
