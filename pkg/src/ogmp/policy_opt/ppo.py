"""Clipped-surrogate policy optimisation: GAE, losses with exact gradients, Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .networks import LOG_STD_MAX, LOG_STD_MIN, NetworkParams, gaussian_entropy, gaussian_log_prob


class UpdateAborted(FloatingPointError):
    def __init__(self, message, epoch=None, minibatch=None):
        super().__init__(message)
        self.epoch = epoch
        self.minibatch = minibatch


def gae(rewards, values, bootstrap_value, dones, gamma: float, lam: float):
    """Generalised advantage estimates along the leading (time) axis.

    ``dones[t]`` cuts both the bootstrap from ``t+1`` and the advantage
    recursion.  Works on ``(T,)`` or ``(T, n_envs)`` arrays.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    last = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def normalize(x, eps: float = 1e-8):
    return (x - x.mean()) / (x.std() + eps)


@dataclass
class LossConfig:
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.005


def ppo_loss_and_grads(params: NetworkParams, obs, actions, old_log_prob, advantages, returns, cfg: LossConfig):
    """Total loss, per-array gradients (ordered like ``params.arrays()``) and stats."""
    B = obs.shape[0]
    z, a_acts = params.actor.forward(obs)
    mean = np.tanh(z)
    ls = params.clamped_log_std()
    std = np.exp(ls)
    logp = gaussian_log_prob(actions, mean, ls)
    log_ratio = logp - old_log_prob
    ratio = np.exp(log_ratio)
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    s1, s2 = ratio * advantages, clipped * advantages
    policy_loss = -np.mean(np.minimum(s1, s2))
    entropy = gaussian_entropy(ls)
    v, c_acts = params.critic.forward(obs)
    v = v[:, 0]
    value_loss = np.mean((v - returns) ** 2)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    # d loss / d logp: only where the unclipped branch is the minimum
    g_logp = np.where(s1 <= s2, -advantages * ratio / B, 0.0)
    diff = actions - mean
    g_mean = g_logp[:, None] * diff / std**2
    g_z = g_mean * (1.0 - mean**2)
    aw, ab = params.actor.backward(a_acts, g_z)
    g_ls = np.sum(g_logp[:, None] * (diff**2 / std**2 - 1.0), axis=0) - cfg.entropy_coef
    g_ls = g_ls * ((params.log_std >= LOG_STD_MIN) & (params.log_std <= LOG_STD_MAX))
    g_v = (2.0 * cfg.value_coef / B) * (v - returns)
    cw, cb = params.critic.backward(c_acts, g_v[:, None])

    grads = []
    for w, b in zip(aw, ab):
        grads += [w, b]
    for w, b in zip(cw, cb):
        grads += [w, b]
    grads.append(g_ls)
    stats = dict(
        policy_loss=float(policy_loss),
        value_loss=float(value_loss),
        entropy=entropy,
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
        approx_kl=float(np.mean((ratio - 1.0) - log_ratio)),
    )
    return float(loss), grads, stats


def clip_grad_norm(grads, max_norm: float):
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        grads = [g * scale for g in grads]
    return grads, total


class Adam:
    def __init__(self, arrays, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        """Update ``arrays`` in place."""
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> list[np.ndarray]:
        return self.m + self.v

    def load_state(self, arrays, t: int):
        k = len(self.m)
        self.m = [a.copy() for a in arrays[:k]]
        self.v = [a.copy() for a in arrays[k:]]
        self.t = int(t)


@dataclass
class UpdateConfig:
    epochs: int = 5
    minibatches: int = 4
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0


def ppo_update(batch: dict, params: NetworkParams, cfg: UpdateConfig, optimizer: Adam, rng: np.random.Generator):
    """Several epochs of minibatch updates over a flattened rollout batch.

    ``batch`` holds flat arrays ``obs, actions, log_prob, advantages, returns``.
    Returns the updated parameters (a fresh copy) and averaged statistics.
    """
    new = params.copy()
    optimizer_arrays = new.arrays()
    N = batch["obs"].shape[0]
    adv = normalize(batch["advantages"])
    loss_cfg = LossConfig(cfg.clip, cfg.value_coef, cfg.entropy_coef)
    size = N // cfg.minibatches
    acc: dict[str, list[float]] = {}
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        for mb in range(cfg.minibatches):
            idx = order[mb * size:(mb + 1) * size]
            loss, grads, stats = ppo_loss_and_grads(
                new, batch["obs"][idx], batch["actions"][idx], batch["log_prob"][idx], adv[idx], batch["returns"][idx], loss_cfg
            )
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise UpdateAborted(f"non-finite loss in epoch {epoch}, minibatch {mb}", epoch, mb)
            grads, norm = clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(optimizer_arrays, grads)
            stats["grad_norm"] = norm
            for k, v in stats.items():
                acc.setdefault(k, []).append(v)
    new.assert_finite()
    return new, {k: float(np.mean(v)) for k, v in acc.items()}
