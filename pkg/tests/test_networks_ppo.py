import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_gae, fd_max_rel_error, random_problem
from ogmp.policy_opt.networks import (
    LOG_2PI,
    NetworkParams,
    gaussian_entropy,
    gaussian_log_prob,
    mlp_param_count,
    policy_forward,
)
from ogmp.policy_opt.ppo import (
    Adam,
    LossConfig,
    UpdateAborted,
    UpdateConfig,
    clip_grad_norm,
    gae,
    normalize,
    ppo_loss_and_grads,
    ppo_update,
)


class TestNetworks:
    def test_zero_network_outputs_zero(self):
        mean, log_std, value, state = policy_forward(NetworkParams.zeros(54), np.ones(54))
        np.testing.assert_array_equal(mean, 0.0)
        np.testing.assert_array_equal(log_std, 0.0)
        assert value == 0.0 and state is None

    def test_param_count_closed_form(self):
        p = NetworkParams.init(54, 3, (200, 100))
        expected = (54 * 200 + 200 + 200 * 100 + 100 + 100 * 3 + 3) + (54 * 200 + 200 + 200 * 100 + 100 + 100 + 1) + 3
        assert p.num_params() == expected
        assert mlp_param_count([54, 200, 100, 3]) == 54 * 200 + 200 + 200 * 100 + 100 + 100 * 3 + 3

    def test_observation_size_checked(self):
        with pytest.raises(ValueError, match="expects 54"):
            policy_forward(NetworkParams.zeros(54), np.ones(18))

    def test_log_std_clamped(self):
        p = NetworkParams.zeros(4, 2, (8,))
        p.log_std[:] = [-9.0, 7.0]
        np.testing.assert_array_equal(policy_forward(p, np.ones(4))[1], [-5.0, 2.0])

    def test_mean_bounded(self):
        p = NetworkParams.init(4, 2, (8,), seed=1)
        mean, *_ = policy_forward(p, 1e3 * np.random.default_rng(0).normal(size=(50, 4)))
        assert np.all(np.abs(mean) <= 1.0)

    def test_init_deterministic(self):
        a, b = NetworkParams.init(6, 3, (8, 4), seed=5), NetworkParams.init(6, 3, (8, 4), seed=5)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5.0, 2.0), min_size=1, max_size=6))
    def test_entropy_closed_form(self, log_std):
        ls = np.array(log_std)
        expected = float(np.sum(0.5 * np.log(2 * np.pi * np.e * np.exp(2 * ls))))
        assert gaussian_entropy(ls) == pytest.approx(expected, abs=1e-9)

    def test_log_prob_standard_normal(self):
        assert gaussian_log_prob(np.zeros(2), np.zeros(2), np.zeros(2)) == pytest.approx(-LOG_2PI)


class TestGae:
    def test_single_step(self):
        adv, ret = gae([1.0], [0.5], 2.0, [0.0], 0.9, 0.95)
        assert adv[0] == pytest.approx(1.0 + 0.9 * 2.0 - 0.5)
        assert ret[0] == pytest.approx(adv[0] + 0.5)

    def test_terminal_cuts_bootstrap(self):
        adv, _ = gae([1.0], [0.5], 100.0, [1.0], 0.9, 0.95)
        assert adv[0] == pytest.approx(0.5)

    def test_lambda_one_is_monte_carlo(self):
        r = np.array([1.0, 2.0, 3.0])
        adv, ret = gae(r, np.zeros(3), 0.0, [0, 0, 1], 0.5, 1.0)
        np.testing.assert_allclose(ret, [1 + 0.5 * 2 + 0.25 * 3, 2 + 0.5 * 3, 3])

    def test_matches_brute_force_batched(self, rng):
        T, n = 16, 5
        r, v = rng.normal(size=(T, n)), rng.normal(size=(T, n))
        boot = rng.normal(size=n)
        adv, _ = gae(r, v, boot, np.zeros((T, n)), 0.99, 0.95)
        for j in range(n):
            np.testing.assert_allclose(adv[:, j], brute_force_gae(r[:, j], v[:, j], boot[j], 0.99, 0.95), atol=1e-10)


class TestLoss:
    def test_identity_ratio_has_no_clipping(self):
        params, (obs, act, _, adv, ret) = random_problem(3)
        mean, ls, _, _ = policy_forward(params, obs)
        old = gaussian_log_prob(act, mean, ls)
        _, _, stats = ppo_loss_and_grads(params, obs, act, old, adv, ret, LossConfig())
        assert stats["clip_fraction"] == 0.0
        assert stats["approx_kl"] == pytest.approx(0.0, abs=1e-12)

    def test_clip_arithmetic(self):
        params, (obs, act, _, _, ret) = random_problem(4, batch=2)
        mean, ls, _, _ = policy_forward(params, obs)
        logp = gaussian_log_prob(act, mean, ls)
        old = logp - np.log([1.5, 1.5])
        adv = np.array([1.0, -1.0])
        _, _, stats = ppo_loss_and_grads(params, obs, act, old, adv, ret, LossConfig(0.2, 0.0, 0.0))
        assert stats["policy_loss"] == pytest.approx(-np.mean([1.2, -1.5]))
        assert stats["clip_fraction"] == 1.0

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("cfg,zero_adv", [
        (LossConfig(0.2, 0.0, 0.0), False),
        (LossConfig(0.2, 1.0, 0.0), True),
        (LossConfig(0.2, 0.0, 1.0), True),
    ])
    def test_gradients_match_finite_differences(self, seed, cfg, zero_adv):
        params, data = random_problem(seed)
        if zero_adv:
            data = (*data[:3], np.zeros_like(data[3]), data[4])
        assert fd_max_rel_error(params, data, cfg) <= 1e-4

    def test_normalize(self, rng):
        x = normalize(rng.normal(3.0, 2.0, 1000))
        assert abs(x.mean()) < 1e-12 and x.std() == pytest.approx(1.0, abs=1e-6)

    def test_grad_clipping(self):
        g, norm = clip_grad_norm([np.array([3.0]), np.array([4.0])], 1.0)
        assert norm == pytest.approx(5.0)
        assert np.sqrt(g[0][0] ** 2 + g[1][0] ** 2) == pytest.approx(1.0, abs=1e-6)


class TestUpdate:
    def batch(self, n=64):
        params, (obs, act, _, adv, ret) = random_problem(0, batch=n)
        mean, ls, _, _ = policy_forward(params, obs)
        return params, dict(obs=obs, actions=act, log_prob=gaussian_log_prob(act, mean, ls), advantages=adv,
                            returns=ret)

    def test_update_reduces_value_loss(self):
        params, batch = self.batch()
        opt = Adam(params.arrays(), lr=1e-2)
        cfg = UpdateConfig(epochs=20, minibatches=1, entropy_coef=0.0)
        _, before = ppo_update(batch, params, UpdateConfig(epochs=1, minibatches=1), Adam(params.arrays(), lr=0.0),
                               np.random.default_rng(0))
        new, _ = ppo_update(batch, params, cfg, opt, np.random.default_rng(0))
        _, after = ppo_update(batch, new, UpdateConfig(epochs=1, minibatches=1), Adam(new.arrays(), lr=0.0),
                              np.random.default_rng(0))
        assert after["value_loss"] < before["value_loss"]

    def test_nan_aborts(self):
        params, batch = self.batch()
        batch["returns"][3] = np.nan
        with pytest.raises(UpdateAborted) as info:
            ppo_update(batch, params, UpdateConfig(minibatches=1), Adam(params.arrays()), np.random.default_rng(0))
        assert info.value.epoch == 0 and info.value.minibatch == 0

    def test_input_params_untouched(self):
        params, batch = self.batch()
        snapshot = [a.copy() for a in params.arrays()]
        ppo_update(batch, params, UpdateConfig(), Adam(params.copy().arrays()), np.random.default_rng(0))
        for a, b in zip(params.arrays(), snapshot):
            np.testing.assert_array_equal(a, b)

    def test_adam_first_step_is_lr_sign(self):
        a = [np.array([1.0, -2.0])]
        Adam(a, lr=0.1).step(a, [np.array([0.5, -3.0])])
        np.testing.assert_allclose(a[0], [0.9, -1.9], atol=1e-6)
