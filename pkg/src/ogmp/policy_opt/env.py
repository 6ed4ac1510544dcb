"""Vectorised oracle-guided environment used for rollouts and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..guidance import (
    OBS_SIZE,
    DeviationBounds,
    RankTraceState,
    RewardConfig,
    check_termination,
    object_rewards,
    observe,
    preference_reward,
    regularization_rewards,
    total_reward,
    tracking_rewards,
)
from ..oracle import (
    EnvFeedback,
    GuardParams,
    HybridOracle,
    ReferenceDynamics,
    ReferenceState,
    loco_manipulation_oracle,
    reach_avoid_oracle,
)
from ..world import Status, TaskSpec, empty_state, episode_status, reset_into, step, trajectory_row


@dataclass
class EnvConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    guards: GuardParams = field(default_factory=GuardParams)
    dynamics: ReferenceDynamics = field(default_factory=ReferenceDynamics)
    rewards: RewardConfig = field(default_factory=RewardConfig.paper_defaults)
    bounds: DeviationBounds = field(default_factory=DeviationBounds)
    t_H: float = 1.0
    preference_enabled: bool = True
    training_mode: bool = True
    terminate_on_success: bool = False
    frame_stack: int = 3
    start_mode: str = "reach"
    start_randomization: float | None = None
    # multi-policy baseline: the episode is cut when the oracle leaves this mode
    mode_lock: str | None = None

    @property
    def obs_dim(self) -> int:
        return OBS_SIZE * self.frame_stack


def build_oracle(cfg: EnvConfig, n: int) -> HybridOracle:
    """Oracle for the task, with task geometry copied into its parameters."""
    spec = cfg.task
    dyn = ReferenceDynamics(**{**cfg.dynamics.__dict__, "detach_point": tuple(spec.detach_center)})
    if spec.task == "reach_avoid":
        return reach_avoid_oracle(cfg.guards, dyn, t_H=cfg.t_H, dt=spec.dt, n=n)
    variant = "kick" if spec.task == "soccer_kick" else "stop"
    guards = GuardParams(**{**cfg.guards.__dict__, "detach_variant": variant, "kick_goal": tuple(spec.goal_center)})
    return loco_manipulation_oracle(guards, dyn, t_H=cfg.t_H, dt=spec.dt, n=n)


@dataclass
class EpisodeRecord:
    outcome: str
    steps: int
    ball_contacts: int
    mode_trace: list[str]
    episode_return: float
    pref_violations: int = 0
    env_index: int = 0
    episode_index: int = 0

    @property
    def success(self) -> bool:
        return self.outcome == "success"


class GuidedEnv:
    """``n`` worlds, one batched oracle, rewards and terminations.

    Actions are in normalised units (clipped to [-1, 1] and scaled by the
    wrench limits).  Each env draws its reset noise from its own generator
    seeded by ``(seed, env_index, episode_index)``.
    """

    def __init__(self, cfg: EnvConfig, n: int, seed: int, record_trajectories: bool = False):
        self.cfg = cfg
        self.n = int(n)
        self.seed = int(seed)
        self.spec = cfg.task
        self.world = empty_state(self.spec, self.n)
        self.oracle = build_oracle(cfg, self.n)
        self.H = self.oracle.horizon_steps
        self.trace = RankTraceState.fresh(self.n)
        self.episode_index = np.zeros(self.n, dtype=np.int64)
        self.record_trajectories = record_trajectories
        self.completed: list[EpisodeRecord] = []
        # (env_index, episode_index, rows) per finished episode when recording
        self.trajectories: list[tuple[int, int, list]] = []
        self._manip = self.oracle.index("manipulate") if "manipulate" in [m.name for m in self.oracle.modes] else -1
        self._lock = None if cfg.mode_lock is None else self.oracle.index(cfg.mode_lock)
        self._stack = np.zeros((self.n, cfg.frame_stack, OBS_SIZE))
        self.total_steps = 0
        self.reset_all()

    # ----------------------------------------------------------------- helpers
    def _feedback(self, idx=None) -> EnvFeedback:
        w = self.world
        fb = EnvFeedback(w.robot.p.copy(), w.object_position.copy(), np.tile(self.spec.target, (self.n, 1)), w.t.copy())
        return fb if idx is None else fb.subset(idx)

    def _measured(self) -> ReferenceState:
        w = self.world
        return ReferenceState.measured(w.robot.p, w.robot.heading, w.object_position, w.robot.v, w.robot.omega,
                                       w.object_velocity)

    def _query(self, mask=None):
        win = self.oracle.query(self._feedback(), self._measured(), mask)
        phase = self.oracle.phase_index(self.world.t)
        return win.state(phase), win.mode

    def _frame(self):
        phase = self.world.step_index % self.H
        return observe(self.world, self.spec, phase, self.H)

    def observation(self) -> np.ndarray:
        return self._stack.reshape(self.n, -1).copy()

    def _push_frame(self, mask=None):
        f = self._frame()
        if mask is None:
            self._stack[:, 1:] = self._stack[:, :-1]
            self._stack[:, 0] = f
        else:
            self._stack[mask] = f[mask][:, None, :]

    def _reset_envs(self, idx):
        rngs = [np.random.default_rng([self.seed, int(i), int(self.episode_index[i])]) for i in idx]
        reset_into(self.world, self.spec, idx, rngs, self.cfg.start_mode, self.cfg.start_randomization,
                   self.cfg.guards.d_near)
        mask = np.zeros(self.n, dtype=bool)
        mask[idx] = True
        start = self.cfg.start_mode if self.spec.task != "reach_avoid" else "reach"
        self.oracle.reset(mask, mode=start)
        self.trace.reset(mask)
        self._ret[idx] = 0.0
        self._violations[idx] = 0
        self._succeeded[idx] = False
        for i in idx:
            self._modes[i] = []
            if self.record_trajectories:
                self._rows[i] = []

    def reset_all(self):
        self._ret = np.zeros(self.n)
        self._violations = np.zeros(self.n, dtype=np.int64)
        self._succeeded = np.zeros(self.n, dtype=bool)
        self._modes: list[list[str]] = [[] for _ in range(self.n)]
        self._rows: list[list] = [[] for _ in range(self.n)]
        self._reset_envs(np.arange(self.n))
        self.ref, self.mode = self._query()
        self._seed_trace(np.arange(self.n))
        self._push_frame(np.ones(self.n, dtype=bool))
        return self.observation()

    def _seed_trace(self, idx):
        ranks = self.oracle.ranks[self.mode[idx]]
        self.trace.max_rank_so_far[idx] = ranks
        self.trace.current_rank[idx] = ranks

    @property
    def current_mode(self) -> np.ndarray:
        return self.mode

    # -------------------------------------------------------------------- step
    def rewards(self):
        cfg = self.cfg
        terms = tracking_rewards(self.world, self.ref, cfg.rewards)
        ranks = self.oracle.ranks[self.mode]
        terms.update(object_rewards(self.world, self.ref, cfg.rewards, ranks))
        violated, _ = preference_reward(self.trace, ranks)
        terms["mode_preference"] = violated if cfg.preference_enabled else np.zeros(self.n)
        return terms, violated

    def step(self, action):
        """Advance all envs; finished envs are reset before returning.

        Returns ``(obs, reward, terminated, truncated, info)``.  For truncated
        envs ``info["final_obs"]`` holds the pre-reset observation rows.
        """
        cfg = self.cfg
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(self.n, 3), -1.0, 1.0) * self.spec.wrench_limits
        reg = regularization_rewards(self.world, cfg.rewards, a)
        prev_mode = self.mode.copy()
        step(self.world, a, self.spec, active_mode=prev_mode, manipulate_index=self._manip)
        self.ref, self.mode = self._query()
        terms, violated = self.rewards()
        terms.update(reg)
        reward, weighted = total_reward(terms, cfg.rewards)
        self.total_steps += self.n

        status = episode_status(self.world, self.spec)
        ref_bound = check_termination(self.world, self.ref, cfg.bounds, cfg.training_mode)
        failed = (status == Status.OUT_OF_ARENA) | (status == Status.DIVERGED) | (status == Status.COLLISION)
        success_now = status == Status.SUCCESS
        self._succeeded |= success_now
        terminated = failed | ref_bound
        if cfg.terminate_on_success:
            terminated |= success_now
        timeout = (self.world.step_index >= self.spec.episode_max_steps) & ~terminated
        truncated = timeout.copy()
        if self._lock is not None:
            truncated |= (self.mode != self._lock) & ~terminated

        self._ret += reward
        self._violations += violated.astype(np.int64)
        names = [m.name for m in self.oracle.modes]
        for i in range(self.n):
            self._modes[i].append(names[self.mode[i]])
            if self.record_trajectories:
                self._rows[i].append(trajectory_row(self.world, i, names[self.mode[i]]))

        self._push_frame()
        done = terminated | truncated
        info = {"terms": terms, "weighted": weighted, "mode": self.mode.copy(), "contact": self.world.contact.copy(),
                "status": status, "ref_bound": ref_bound}
        if done.any():
            idx = np.nonzero(done)[0]
            info["final_obs"] = self.observation()[idx]
            info["done_index"] = idx
            for i in idx:
                if self._succeeded[i]:
                    outcome = "success"
                elif ref_bound[i]:
                    outcome = "reference_bound"
                elif failed[i]:
                    outcome = Status(int(status[i])).reason
                elif timeout[i]:
                    outcome = "timeout"
                else:
                    outcome = "mode_exit"
                rec = EpisodeRecord(
                    outcome=outcome,
                    steps=int(self.world.step_index[i]),
                    ball_contacts=int(self.world.contact_count[i]),
                    mode_trace=self._modes[i],
                    episode_return=float(self._ret[i]),
                    pref_violations=int(self._violations[i]),
                    env_index=int(i),
                    episode_index=int(self.episode_index[i]),
                )
                self.completed.append(rec)
                if self.record_trajectories:
                    self.trajectories.append((int(i), int(self.episode_index[i]), self._rows[i]))
                self.episode_index[i] += 1
            self._reset_envs(idx)
            ref, mode = self._query(done)
            self.ref = _merge_state(self.ref, ref, idx)
            self.mode[idx] = mode[idx]
            self._seed_trace(idx)
            self._push_frame(done)
        return self.observation(), reward, terminated, truncated, info

    def pop_completed(self) -> list[EpisodeRecord]:
        out, self.completed = self.completed, []
        return out


def _merge_state(old: ReferenceState, new: ReferenceState, idx) -> ReferenceState:
    fields = ("p_robot_ref", "heading_ref", "v_robot_ref", "omega_robot_ref", "p_object_ref", "v_object_ref")
    out = ReferenceState(*(getattr(old, f).copy() for f in fields))
    for f in fields:
        getattr(out, f)[idx] = getattr(new, f)[idx]
    return out
