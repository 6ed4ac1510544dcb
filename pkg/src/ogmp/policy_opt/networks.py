"""Dense tanh networks with hand-written reverse-mode gradients (float64 numpy)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class MLP:
    """``tanh`` hidden layers, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, out_gain: float = 1.0) -> "MLP":
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == len(sizes) - 2 else np.sqrt(2.0)
            weights.append(_orthogonal(fan_in, fan_out, gain, rng))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes) -> "MLP":
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])], [np.zeros(b) for b in sizes[1:]])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward(self, x):
        """Returns the output and the per-layer activations needed by :meth:`backward`."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out):
        """Gradients of a scalar loss w.r.t. weights and biases given d loss / d output."""
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return gw, gb

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _orthogonal(fan_in, fan_out, gain, rng):
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:fan_in, :fan_out])


@dataclass
class NetworkParams:
    """Separate actor and critic MLPs plus a state-independent log-std.

    The actor mean is ``tanh`` of the actor output, i.e. an action in
    normalised units; the environment scales it by the wrench limits.
    """

    actor: MLP
    critic: MLP
    log_std: np.ndarray

    @classmethod
    def init(cls, obs_dim: int, act_dim: int = 3, hidden=(200, 100), seed: int = 0, init_std: float = 0.5) -> "NetworkParams":
        rng = np.random.default_rng(seed)
        actor = MLP.init([obs_dim, *hidden, act_dim], rng, out_gain=0.01)
        critic = MLP.init([obs_dim, *hidden, 1], rng, out_gain=1.0)
        return cls(actor, critic, np.full(act_dim, np.log(init_std)))

    @classmethod
    def zeros(cls, obs_dim: int, act_dim: int = 3, hidden=(200, 100)) -> "NetworkParams":
        return cls(MLP.zeros([obs_dim, *hidden, act_dim]), MLP.zeros([obs_dim, *hidden, 1]), np.zeros(act_dim))

    @property
    def obs_dim(self) -> int:
        return self.actor.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.sizes[-1]

    def arrays(self) -> list[np.ndarray]:
        return self.actor.arrays() + self.critic.arrays() + [self.log_std]

    def names(self) -> list[str]:
        out = []
        for net, mlp in (("actor", self.actor), ("critic", self.critic)):
            for i in range(len(mlp.weights)):
                out += [f"{net}.w{i}", f"{net}.b{i}"]
        return out + ["log_std"]

    def num_params(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.actor.copy(), self.critic.copy(), self.log_std.copy())

    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def assert_finite(self):
        for name, a in zip(self.names(), self.arrays()):
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite parameters in {name}")


def mlp_param_count(sizes) -> int:
    """Closed form: sum over layers of fan_in * fan_out + fan_out."""
    return int(sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])))


def policy_forward(params: NetworkParams, observation, recurrent_state=None):
    """Mean action, log-std, value and (unused) recurrent state for a batch of observations."""
    obs = np.asarray(observation, dtype=np.float64)
    single = obs.ndim == 1
    obs = np.atleast_2d(obs)
    if obs.shape[-1] != params.obs_dim:
        raise ValueError(f"observation has {obs.shape[-1]} entries, network expects {params.obs_dim}")
    z, _ = params.actor.forward(obs)
    mean = np.tanh(z)
    value, _ = params.critic.forward(obs)
    value = value[:, 0]
    if single:
        return mean[0], params.clamped_log_std(), value[0], recurrent_state
    return mean, params.clamped_log_std(), value, recurrent_state


def gaussian_log_prob(actions, mean, log_std):
    std = np.exp(log_std)
    return np.sum(-0.5 * ((actions - mean) / std) ** 2 - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))
