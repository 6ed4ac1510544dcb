"""On-policy rollout storage and collection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import EpisodeRecord, GuidedEnv
from .networks import NetworkParams, gaussian_log_prob, policy_forward
from .ppo import gae


@dataclass
class RolloutBuffer:
    """Arrays of shape ``(n_steps, n_envs, ...)``.

    ``rewards`` already include ``gamma * V(final_obs)`` for truncated steps,
    so that ``dones`` (terminated or truncated) can cut the recursion in both
    cases while truncations still bootstrap.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_prob: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    mode_rank: np.ndarray
    mode: np.ndarray
    bootstrap_value: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def allocate(cls, n_steps: int, n_envs: int, obs_dim: int, act_dim: int = 3) -> "RolloutBuffer":
        z = lambda *s, dt=np.float64: np.zeros((n_steps, n_envs, *s), dtype=dt)  # noqa: E731
        return cls(z(obs_dim), z(act_dim), z(), z(), z(), z(dt=bool), z(dt=bool), z(dt=np.int64), z(dt=np.int64))

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0]

    @property
    def capacity(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    @property
    def dones(self) -> np.ndarray:
        return self.terminated | self.truncated

    def compute_advantages(self, gamma: float, lam: float):
        self.advantages, self.returns = gae(self.rewards, self.values, self.bootstrap_value, self.dones, gamma, lam)

    def flat(self) -> dict:
        k = self.capacity
        return dict(
            obs=self.obs.reshape(k, -1),
            actions=self.actions.reshape(k, -1),
            log_prob=self.log_prob.reshape(k),
            advantages=self.advantages.reshape(k),
            returns=self.returns.reshape(k),
        )


def collect_rollouts(params: NetworkParams, env: GuidedEnv, n_steps: int, rng: np.random.Generator,
                     gamma: float = 0.99, reward_scale: float = 1.0) -> tuple[RolloutBuffer, list[EpisodeRecord]]:
    """Run ``n_steps`` vectorised steps with actions sampled from the policy."""
    buf = RolloutBuffer.allocate(n_steps, env.n, params.obs_dim, params.act_dim)
    obs = env.observation()
    for t in range(n_steps):
        mean, log_std, value, _ = policy_forward(params, obs)
        action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        buf.obs[t] = obs
        buf.actions[t] = action
        buf.log_prob[t] = gaussian_log_prob(action, mean, log_std)
        buf.values[t] = value
        obs, reward, terminated, truncated, info = env.step(action)
        reward = reward * reward_scale
        if truncated.any():
            idx = np.nonzero(truncated)[0]
            final = info["final_obs"][np.searchsorted(info["done_index"], idx)]
            _, _, v_final, _ = policy_forward(params, final)
            reward = reward.copy()
            reward[idx] += gamma * v_final
        buf.rewards[t] = reward
        buf.terminated[t] = terminated
        buf.truncated[t] = truncated
        buf.mode[t] = info["mode"]
        buf.mode_rank[t] = env.oracle.ranks[info["mode"]]
    _, _, buf.bootstrap_value, _ = policy_forward(params, obs)
    return buf, env.pop_completed()
