"""Couples the oracle to the world: observations, rewards and reference terminations."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .oracle import ReferenceState
from .world import REST_SPEED, PlanarWorldState, TaskSpec

OBS_SIZE = 18


@dataclass
class DeviationBounds:
    """Per-coordinate reference bounds; a zero weight disables a coordinate."""

    rho_robot_x: float = 0.4
    rho_robot_y: float = 0.4
    rho_object_x: float = 0.4
    rho_object_y: float = 0.4
    weight_matrix_diag: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if min(self.rho) <= 0:
            raise ValueError("all deviation bounds must be positive")
        if min(self.weight_matrix_diag) < 0:
            raise ValueError("weights must be non-negative")

    @property
    def rho(self) -> np.ndarray:
        return np.array([self.rho_robot_x, self.rho_robot_y, self.rho_object_x, self.rho_object_y])


@dataclass
class Term:
    weight: float
    scale: float = 0.0
    gate: int | None = None


def _default_terms() -> dict[str, Term]:
    return {
        "base_pos": Term(0.3, 5.0),
        "base_ori": Term(0.3, 5.0),
        "base_lin_vel": Term(0.15, 2.0),
        "base_ang_vel": Term(0.15, 2.0),
        "mode_preference": Term(-5.0),
        "object_proximity": Term(0.5, gate=1),
        "object_pos": Term(1.0, 2.0, gate=2),
        "object_lin_vel": Term(1.0, 2.0, gate=2),
        "ball_rest_penalty": Term(-0.5, gate=1),
        "effort_mag": Term(0.1, 10.0),
        "effort_rate": Term(0.1, 10.0),
        "body_vel_reg": Term(0.1, 10.0),
    }


TERM_NAMES = tuple(_default_terms())


@dataclass
class RewardConfig:
    terms: dict[str, Term] = field(default_factory=_default_terms)
    c_pos: float = 1.0
    c_vel: float = 1.0
    c_effort: float = 40.0
    c_body_vel: float = 1.0
    h_robot: float = 0.5
    rest_speed: float = REST_SPEED
    regularization_enabled: bool = False

    def __post_init__(self):
        unknown = set(self.terms) - set(TERM_NAMES)
        if unknown:
            raise ValueError(f"unknown reward terms {sorted(unknown)}")
        for name, t in self.terms.items():
            if t.scale < 0:
                raise ValueError(f"{name}: scale must be non-negative")

    @classmethod
    def paper_defaults(cls, regularization_enabled: bool = False) -> "RewardConfig":
        return cls(regularization_enabled=regularization_enabled)

    def weight(self, name: str) -> float:
        return self.terms[name].weight


@dataclass
class RankTraceState:
    """Highest rank seen so far in each env's episode (-1 before the first step)."""

    max_rank_so_far: np.ndarray
    current_rank: np.ndarray

    @classmethod
    def fresh(cls, n: int = 1) -> "RankTraceState":
        return cls(np.full(n, -1, dtype=np.int64), np.full(n, -1, dtype=np.int64))

    def reset(self, mask):
        self.max_rank_so_far[mask] = -1
        self.current_rank[mask] = -1


def preference_reward(trace: RankTraceState, new_rank) -> tuple[np.ndarray, RankTraceState]:
    """Indicator of a rank below the episode's running maximum, then update the maximum."""
    new_rank = np.asarray(new_rank, dtype=np.int64).reshape(trace.max_rank_so_far.shape)
    violated = (new_rank < trace.max_rank_so_far).astype(np.float64)
    trace.max_rank_so_far = np.maximum(trace.max_rank_so_far, new_rank)
    trace.current_rank = new_rank.copy()
    return violated, trace


def observe(world: PlanarWorldState, spec: TaskSpec, phase_step, horizon_steps: int) -> np.ndarray:
    """Fixed 18-entry policy observation per env.

    Layout: heading cos/sin, robot velocity, yaw rate, normalised previous
    wrench, object offset, object velocity, target offset, goal offset,
    phase cos/sin.  No oracle reference or mode id is included.
    """
    r = world.robot
    n = world.n
    phase = 2.0 * np.pi * np.asarray(phase_step, dtype=np.float64) / horizon_steps
    phase = np.broadcast_to(phase, (n,))
    obs = np.empty((n, OBS_SIZE))
    obs[:, 0] = np.cos(r.heading)
    obs[:, 1] = np.sin(r.heading)
    obs[:, 2:4] = r.v
    obs[:, 4] = r.omega
    obs[:, 5:8] = r.u_prev / spec.wrench_limits
    obs[:, 8:10] = world.object_position - r.p
    obs[:, 10:12] = world.object_velocity
    obs[:, 12:14] = np.asarray(spec.target) - r.p
    obs[:, 14:16] = np.asarray(spec.goal_center) - r.p
    obs[:, 16] = np.cos(phase)
    obs[:, 17] = np.sin(phase)
    return obs


def _nrm(x):
    return np.sqrt(np.sum(x * x, axis=-1))


def tracking_rewards(world: PlanarWorldState, ref: ReferenceState, config: RewardConfig) -> dict[str, np.ndarray]:
    r = world.robot
    T = config.terms
    h = np.stack([np.cos(r.heading), np.sin(r.heading)], axis=-1)
    dot = np.sum(h * ref.heading_ref, axis=-1)
    return {
        "base_pos": np.exp(-T["base_pos"].scale * _nrm(r.p - ref.p_robot_ref) / config.c_pos),
        "base_ori": np.exp(-T["base_ori"].scale * (1.0 - dot * dot)),
        "base_lin_vel": np.exp(-T["base_lin_vel"].scale * _nrm(r.v - ref.v_robot_ref) / config.c_vel),
        "base_ang_vel": np.exp(-T["base_ang_vel"].scale * np.abs(r.omega - ref.omega_robot_ref) / config.c_vel),
    }


def object_rewards(world: PlanarWorldState, ref: ReferenceState, config: RewardConfig, active_mode_rank) -> dict[str, np.ndarray]:
    """Object terms, each zero unless the active rank matches the term's gate."""
    T = config.terms
    rank = np.asarray(active_mode_rank)
    p_obj, v_obj = world.object_position, world.object_velocity

    def gate(name):
        g = T[name].gate
        return np.ones(world.n) if g is None else (rank == g).astype(np.float64)

    near = (_nrm(p_obj - world.robot.p) <= config.h_robot).astype(np.float64)
    rest = (_nrm(v_obj) <= config.rest_speed).astype(np.float64)
    return {
        "object_proximity": near * gate("object_proximity"),
        "object_pos": np.exp(-T["object_pos"].scale * _nrm(p_obj - ref.p_object_ref) / config.c_pos) * gate("object_pos"),
        "object_lin_vel": np.exp(-T["object_lin_vel"].scale * _nrm(v_obj - ref.v_object_ref) / config.c_vel)
        * gate("object_lin_vel"),
        "ball_rest_penalty": rest * gate("ball_rest_penalty"),
    }


def regularization_rewards(world: PlanarWorldState, config: RewardConfig, action=None) -> dict[str, np.ndarray]:
    """Effort, effort-rate and body-velocity regularisers.

    ``action`` is the wrench about to be applied; the rate term compares it to
    the robot's previous wrench.  Without an action the previous wrench is
    scored and the rate term sees no change.
    """
    r = world.robot
    names = ("effort_mag", "effort_rate", "body_vel_reg")
    if not config.regularization_enabled:
        return {k: np.zeros(world.n) for k in names}
    T = config.terms
    u = r.u_prev if action is None else np.asarray(action, dtype=np.float64).reshape(r.u_prev.shape)
    body = np.concatenate([r.v, r.omega[:, None]], axis=-1)
    return {
        "effort_mag": np.exp(-T["effort_mag"].scale * _nrm(u) / config.c_effort),
        "effort_rate": np.exp(-T["effort_rate"].scale * _nrm(u - r.u_prev) / config.c_effort),
        "body_vel_reg": np.exp(-T["body_vel_reg"].scale * _nrm(body) / config.c_body_vel),
    }


def total_reward(terms: dict[str, np.ndarray], config: RewardConfig) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Weighted sum of term values; also returns the weighted breakdown."""
    weighted = {k: config.weight(k) * np.asarray(v, dtype=np.float64) for k, v in terms.items()}
    total = sum(weighted.values()) if weighted else np.zeros(1)
    return np.asarray(total, dtype=np.float64), weighted


def check_termination(world: PlanarWorldState, ref: ReferenceState, bounds: DeviationBounds, training_mode: bool) -> np.ndarray:
    """Per-env flag: some weighted coordinate deviation exceeds its bound.

    Always False outside training; arena and timeout terminations live in
    :func:`ogmp.world.episode_status`.
    """
    if not training_mode:
        return np.zeros(world.n, dtype=bool)
    dev = np.concatenate([world.robot.p - ref.p_robot_ref, world.object_position - ref.p_object_ref], axis=-1)
    w = np.asarray(bounds.weight_matrix_diag, dtype=np.float64)
    return np.any(w * np.abs(dev) > bounds.rho, axis=-1)


BREAKDOWN_COLUMNS = ("step", "term", "value", "weighted")


def write_reward_breakdown(path, rows) -> Path:
    """Rows are ``(step, term, value, weighted)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BREAKDOWN_COLUMNS)
        for step, term, value, weighted in rows:
            w.writerow([int(step), term, f"{float(value):.9g}", f"{float(weighted):.9g}"])
    return path
