"""Training loops, the multi-policy baseline, evaluation and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import EnvConfig, EpisodeRecord, GuidedEnv
from .networks import NetworkParams, policy_forward
from .ppo import Adam, UpdateAborted, UpdateConfig, ppo_update
from .rollout import collect_rollouts

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CURVE_COLUMNS = ("iteration", "mean_return", "mean_ep_len", "success_rate", "pref_violations_per_ep")
BASELINE_MODES = ("reach", "manipulate", "detach")


@dataclass
class TrainConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    n_envs: int = 64
    n_steps: int = 64
    total_iterations: int = 200
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    seed: int = 0
    architecture: str = "feedforward"
    hidden: tuple[int, ...] = (200, 100)
    init_std: float = 0.5
    reward_scale: float = 0.05
    baseline_randomization: float = 0.25
    checkpoint_every: int = 0

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lam must lie in (0, 1]")
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if self.architecture != "feedforward":
            raise ValueError(f"unsupported architecture {self.architecture!r}; only 'feedforward' is built")
        if (self.n_envs * self.n_steps) % self.minibatches:
            raise ValueError("n_envs * n_steps must be divisible by minibatches")

    @property
    def task(self):
        return self.env.task

    @property
    def preference_enabled(self) -> bool:
        return self.env.preference_enabled

    def update_config(self) -> UpdateConfig:
        return UpdateConfig(self.epochs, self.minibatches, self.clip, self.value_coef, self.entropy_coef,
                            self.max_grad_norm)

    def steps_per_iteration(self) -> int:
        return self.n_envs * self.n_steps


@dataclass
class TrainResult:
    params: NetworkParams
    curve: list[dict]
    total_env_steps: int
    optimizer: Adam | None = None
    transition_counts: np.ndarray | None = None
    rng_state: dict | None = None


def _curve_row(iteration: int, records: list[EpisodeRecord], stats: dict) -> dict:
    if records:
        row = dict(
            iteration=iteration,
            mean_return=float(np.mean([r.episode_return for r in records])),
            mean_ep_len=float(np.mean([r.steps for r in records])),
            success_rate=float(np.mean([r.success for r in records])),
            pref_violations_per_ep=float(np.mean([r.pref_violations for r in records])),
        )
    else:
        row = dict(iteration=iteration, mean_return=float("nan"), mean_ep_len=float("nan"), success_rate=float("nan"),
                   pref_violations_per_ep=float("nan"))
    row["episodes"] = len(records)
    row.update({k: v for k, v in stats.items()})
    return row


def train(config: TrainConfig, out_dir=None, init_params: NetworkParams | None = None, tag: str = "") -> TrainResult:
    """Collect/update for ``total_iterations``; reproducible from ``(config, seed)``."""
    env = GuidedEnv(config.env, config.n_envs, config.seed)
    params = init_params.copy() if init_params is not None else NetworkParams.init(
        config.env.obs_dim, 3, config.hidden, seed=config.seed, init_std=config.init_std)
    rng = np.random.default_rng([config.seed, 7919])
    optimizer = Adam(params.arrays(), lr=config.lr)
    upd = config.update_config()
    curve = []
    n_modes = len(env.oracle.modes)
    counts = np.zeros((n_modes, n_modes), dtype=np.int64)
    out = Path(out_dir) if out_dir is not None else None
    for it in range(1, config.total_iterations + 1):
        buf, records = collect_rollouts(params, env, config.n_steps, rng, config.gamma, config.reward_scale)
        buf.compute_advantages(config.gamma, config.lam)
        try:
            params, stats = ppo_update(buf.flat(), params, upd, optimizer, rng)
        except UpdateAborted as exc:
            raise UpdateAborted(f"iteration {it}: {exc}", exc.epoch, exc.minibatch) from exc
        for r in records:
            idx = [env.oracle.index(m) for m in r.mode_trace]
            np.add.at(counts, (idx[:-1], idx[1:]), 1)
        row = _curve_row(it, records, stats)
        curve.append(row)
        log.info("%siter %d return %.3f len %.1f success %.2f", tag, it, row["mean_return"], row["mean_ep_len"],
                 row["success_rate"])
        if out is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            save_checkpoint(out / "checkpoints" / f"{tag}iter_{it:05d}.npz", params, config, it, optimizer,
                            rng_state=rng.bit_generator.state)
    if out is not None:
        save_checkpoint(out / "checkpoints" / f"{tag}final.npz", params, config, config.total_iterations, optimizer,
                        rng_state=rng.bit_generator.state)
    return TrainResult(params, curve, env.total_steps, optimizer, counts, rng.bit_generator.state)


def baseline_config(config: TrainConfig, mode: str, iterations: int) -> TrainConfig:
    """Mode-specific training setup for one policy of the multi-policy baseline."""
    widen = config.baseline_randomization if mode != "reach" else None
    env = replace(config.env, start_mode=mode, mode_lock=mode, preference_enabled=False, start_randomization=widen)
    return replace(config, env=env, total_iterations=iterations)


def split_budget(total: int, parts: int = 3) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def train_multi_policy_baseline(config: TrainConfig, out_dir=None) -> dict[str, TrainResult]:
    """One policy per mode; the three share the single-policy iteration budget."""
    if config.env.task.task == "reach_avoid":
        raise ValueError("the multi-policy baseline is defined for the three-mode loco-manipulation oracle")
    results = {}
    for mode, iters in zip(BASELINE_MODES, split_budget(config.total_iterations)):
        cfg = baseline_config(config, mode, iters)
        results[mode] = train(cfg, out_dir, tag=f"{mode}_")
    return results


# ---------------------------------------------------------------- evaluation
def eval_env_config(env_cfg: EnvConfig) -> EnvConfig:
    return replace(env_cfg, training_mode=False, terminate_on_success=True, start_mode="reach", mode_lock=None,
                   start_randomization=None)


def evaluate(policy, env_cfg: EnvConfig, n_episodes: int = 100, seed: int = 0,
             record_trajectories: bool = False) -> tuple[list[EpisodeRecord], list[list]]:
    """Deterministic (mean-action) evaluation with reference terminations off.

    ``policy`` is a :class:`NetworkParams` or a mapping from mode name to
    parameters; in the latter case the oracle's active mode picks the policy
    (finite-state-machine dispatch).  Episode ``i`` runs in env ``i`` and its
    reset noise is drawn from ``(seed, i, 0)``.
    """
    cfg = eval_env_config(env_cfg)
    env = GuidedEnv(cfg, n_episodes, seed, record_trajectories=record_trajectories)
    names = [m.name for m in env.oracle.modes]
    finished: dict[int, EpisodeRecord] = {}
    trajectories: dict[int, list] = {}
    obs = env.observation()
    while len(finished) < n_episodes:
        action = select_action(policy, obs, env.mode, names)
        obs, *_ = env.step(action)
        for rec in env.pop_completed():
            if rec.episode_index == 0 and rec.env_index not in finished:
                finished[rec.env_index] = rec
        for i, ep, rows in env.trajectories:
            if ep == 0:
                trajectories.setdefault(i, rows)
        env.trajectories = []
    records = [finished[i] for i in range(n_episodes)]
    return records, [trajectories.get(i, []) for i in range(n_episodes)]


def select_action(policy, obs, modes, names) -> np.ndarray:
    if isinstance(policy, NetworkParams):
        mean, _, _, _ = policy_forward(policy, obs)
        return mean
    action = np.zeros((obs.shape[0], 3))
    for k, name in enumerate(names):
        sel = modes == k
        if sel.any():
            mean, _, _, _ = policy_forward(policy[name], obs[sel])
            action[sel] = mean
    return action


# ---------------------------------------------------------------- checkpoints
class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: NetworkParams, config, iteration: int, optimizer: Adam | None = None,
                    config_echo: dict | None = None, rng_state: dict | None = None) -> Path:
    from ..config import to_dict  # local import: config depends on this module

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(
        version=CHECKPOINT_VERSION,
        iteration=int(iteration),
        names=params.names(),
        actor_sizes=params.actor.sizes,
        critic_sizes=params.critic.sizes,
        config=config_echo if config_echo is not None else to_dict(config),
        optimizer_t=0 if optimizer is None else optimizer.t,
        rng_state=rng_state,
    )
    arrays = {f"p:{n}": a for n, a in zip(params.names(), params.arrays())}
    if optimizer is not None:
        arrays.update({f"opt:{i}": a for i, a in enumerate(optimizer.state_arrays())})
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    return path


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(bytes(data["__meta__"]).decode())
    except Exception as exc:  # noqa: BLE001 - any parse failure means a corrupt file
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc.__class__.__name__}: {exc})") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('version')!r}, expected {CHECKPOINT_VERSION}")
    for key in ("names", "actor_sizes", "critic_sizes", "config"):
        if key not in meta:
            raise CheckpointError(f"{path}: missing field {key!r}")
    params = NetworkParams.zeros(meta["actor_sizes"][0], meta["actor_sizes"][-1], tuple(meta["actor_sizes"][1:-1]))
    try:
        for name, arr in zip(params.names(), params.arrays()):
            stored = data[f"p:{name}"]
            if stored.shape != arr.shape:
                raise CheckpointError(f"{path}: {name} has shape {stored.shape}, expected {arr.shape}")
            arr[...] = stored
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc}") from exc
    return params, meta


def write_curves(path, curve: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in curve:
            w.writerow([row["iteration"]] + [f"{row[c]:.9g}" for c in CURVE_COLUMNS[1:]])
    return path
