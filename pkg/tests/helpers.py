"""Independent reference implementations used by several test modules."""

import numpy as np

from ogmp.policy_opt.networks import NetworkParams
from ogmp.policy_opt.ppo import LossConfig, ppo_loss_and_grads


def brute_force_preference(ranks):
    """Penalty indicator per step: rank strictly below the maximum of all earlier ranks."""
    return [1.0 if t > 0 and ranks[t] < max(ranks[:t]) else 0.0 for t in range(len(ranks))]


def brute_force_gae(rewards, values, bootstrap, gamma, lam):
    """Advantage as the explicit (gamma*lam)-weighted sum of TD residuals of one episode."""
    T = len(rewards)
    nxt = list(values[1:]) + [bootstrap]
    deltas = [rewards[t] + gamma * nxt[t] - values[t] for t in range(T)]
    return np.array([sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, T)) for t in range(T)])


def random_problem(seed, obs_dim=4, act_dim=2, hidden=(8,), batch=16):
    rng = np.random.default_rng(seed)
    params = NetworkParams.init(obs_dim, act_dim, hidden, seed=seed, init_std=0.6)
    for a in params.arrays()[:-1]:
        a += 0.3 * rng.normal(size=a.shape)
    params.log_std[:] = rng.uniform(-1.0, 0.5, act_dim)
    obs = rng.normal(size=(batch, obs_dim))
    actions = rng.normal(scale=0.7, size=(batch, act_dim))
    old_logp = rng.normal(-2.0, 0.5, size=batch)
    adv = rng.normal(size=batch)
    returns = rng.normal(size=batch)
    return params, (obs, actions, old_logp, adv, returns)


def fd_max_rel_error(params, data, cfg: LossConfig, h=1e-6, floor=1e-6):
    """Largest elementwise relative error between analytic and central-difference gradients."""
    _, grads, _ = ppo_loss_and_grads(params, *data, cfg)
    worst = 0.0
    for arr, g in zip(params.arrays(), grads):
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            lp, _, _ = ppo_loss_and_grads(params, *data, cfg)
            arr[i] = old - h
            lm, _, _ = ppo_loss_and_grads(params, *data, cfg)
            arr[i] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), floor))
    return worst
