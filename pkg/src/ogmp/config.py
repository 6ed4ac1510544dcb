"""Run configuration files: YAML sections mapped onto the typed configs.

Sections are ``task``, ``oracle``, ``rewards``, ``bounds``, ``train`` and
``eval`` plus the top-level ``seed`` and ``output_dir``.  Every key is
optional; unknown keys are errors.  ``to_dict`` emits every effective
value, so loading an echo reproduces the same in-memory config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .guidance import DeviationBounds, RewardConfig
from .oracle import GuardParams, ReferenceDynamics
from .policy_opt.env import EnvConfig
from .policy_opt.train import TrainConfig
from .world import make_task


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    episodes: int = 100
    seed: int = 0
    record_trajectories: bool = True
    # trajectory CSVs written for the first this-many episodes
    trajectory_sample: int = 10


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    @property
    def env(self) -> EnvConfig:
        return self.train.env


# oracle parameters derived from the task layout are not user-facing
_DERIVED_GUARDS = {"detach_variant", "kick_goal"}
_DERIVED_DYNAMICS = {"detach_point"}
_ENV_TRAIN_KEYS = ("preference_enabled", "training_mode", "terminate_on_success", "frame_stack", "start_mode",
                   "start_randomization", "mode_lock")
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in ("env", "seed"))
_TOP_KEYS = ("task", "oracle", "rewards", "bounds", "train", "eval", "seed", "output_dir")


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _coerce(value, default, where):
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _check_keys(data, allowed, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")


def _apply(obj, data: dict, where: str, skip=()):
    names = [f.name for f in fields(obj) if f.name not in skip]
    _check_keys(data, names, where)
    upd = {k: _coerce(v, getattr(obj, k), f"{where}.{k}") for k, v in data.items()}
    try:
        return replace(obj, **upd)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _section(obj, skip=()) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if f.name not in skip}


def to_dict(cfg) -> dict:
    if isinstance(cfg, TrainConfig):
        cfg = RunConfig(train=cfg, seed=cfg.seed)
    env = cfg.train.env
    task = _section(env.task)
    task = {"name": task.pop("task"), **task}
    rewards = _section(env.rewards, skip=("terms",))
    rewards["terms"] = {k: _section(t) for k, t in env.rewards.terms.items()}
    train = {k: _plain(getattr(cfg.train, k)) for k in _TRAIN_KEYS}
    train.update({k: getattr(env, k) for k in _ENV_TRAIN_KEYS})
    return dict(
        task=task,
        oracle={**_section(env.guards, _DERIVED_GUARDS), **_section(env.dynamics, _DERIVED_DYNAMICS), "t_H": env.t_H},
        rewards=rewards,
        bounds=_section(env.bounds),
        train=train,
        eval=_section(cfg.eval),
        seed=cfg.seed,
        output_dir=cfg.output_dir,
    )


def from_dict(data: dict | None) -> RunConfig:
    data = {} if data is None else data
    _check_keys(data, _TOP_KEYS, "config")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"config.seed: expected an integer, got {seed!r}")

    task_data = dict(data.get("task") or {})
    name = task_data.pop("name", "soccer_stop")
    try:
        task = _apply(make_task(name), task_data, "task", skip=("task",))
    except ValueError as exc:
        raise ConfigError(f"task: {exc}") from exc

    oracle = dict(data.get("oracle") or {})
    _check_keys(oracle, [f.name for f in fields(GuardParams) if f.name not in _DERIVED_GUARDS]
                + [f.name for f in fields(ReferenceDynamics) if f.name not in _DERIVED_DYNAMICS] + ["t_H"], "oracle")
    g_keys = {f.name for f in fields(GuardParams)}
    guards = _apply(GuardParams(), {k: v for k, v in oracle.items() if k in g_keys}, "oracle", _DERIVED_GUARDS)
    dyn = _apply(ReferenceDynamics(), {k: v for k, v in oracle.items() if k in {f.name for f in fields(ReferenceDynamics)}},
                 "oracle", _DERIVED_DYNAMICS)
    t_H = float(oracle.get("t_H", 1.0))

    rw = dict(data.get("rewards") or {})
    terms_data = rw.pop("terms", {}) or {}
    rewards = _apply(RewardConfig.paper_defaults(), rw, "rewards", skip=("terms",))
    terms = dict(rewards.terms)
    _check_keys(terms_data, terms, "rewards.terms")
    for k, v in terms_data.items():
        terms[k] = _apply(terms[k], v, f"rewards.terms.{k}")
    rewards = replace(rewards, terms=terms)

    bounds = _apply(DeviationBounds(), data.get("bounds") or {}, "bounds")

    tr = dict(data.get("train") or {})
    _check_keys(tr, _TRAIN_KEYS + _ENV_TRAIN_KEYS, "train")
    env = EnvConfig(task=task, guards=guards, dynamics=dyn, rewards=rewards, bounds=bounds, t_H=t_H)
    env = _apply(env, {k: v for k, v in tr.items() if k in _ENV_TRAIN_KEYS}, "train")
    base = TrainConfig(env=env, seed=seed)
    train = _apply(base, {k: v for k, v in tr.items() if k in _TRAIN_KEYS}, "train")

    ev = _apply(EvalConfig(), data.get("eval") or {}, "eval")
    return RunConfig(train=train, eval=ev, seed=seed, output_dir=str(data.get("output_dir", "runs/default")))


def set_override(data: dict, assignment: str) -> dict:
    """Apply ``section.key=value`` (value parsed as YAML) to a raw config tree."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"--set: empty key in {assignment!r}")
    node = data
    for p in path[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set {key}: {p} is not a section")
        node = nxt
    node[path[-1]] = yaml.safe_load(raw)
    return data


def load(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for o in overrides:
        set_override(data, o)
    if seed is not None:
        data["seed"] = seed
    return from_dict(data)


def dumps(cfg) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)

