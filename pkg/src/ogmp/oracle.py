"""Hybrid-automaton reference oracles.

An oracle is a set of ranked modes, a guard table of permissible switches and
per-mode reference dynamics.  Every call to :meth:`HybridOracle.query`
evaluates the guards on fresh environment feedback and returns a finite-horizon
reference window for the active mode.

All state is batched: an oracle drives ``n`` independent environments and
every array carries a leading ``n`` axis.  Windows are regenerated from the
measured plant state at the start of each reference cycle and whenever the
active mode changes; in between, the cached window is returned so that a policy
is asked to track a reference that does not move with it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class FeedbackError(ValueError):
    """Raised for non-finite or otherwise malformed environment feedback."""


class GuardConflictError(RuntimeError):
    """Raised when two non-self guards fire from the same mode."""


@dataclass(frozen=True)
class ModeId:
    name: str
    rank: int

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError(f"mode rank must be non-negative, got {self.rank}")


REACH = ModeId("reach", 0)
MANIPULATE = ModeId("manipulate", 1)
DETACH = ModeId("detach", 2)
AVOID = ModeId("avoid", 0)


def _as_points(x, n=None) -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if n is not None and a.shape[0] == 1 and n > 1:
        a = np.repeat(a, n, axis=0)
    return a


def _as_scalars(x, n=None) -> np.ndarray:
    a = np.atleast_1d(np.array(x, dtype=np.float64))
    if n is not None and a.shape[0] == 1 and n > 1:
        a = np.repeat(a, n)
    return a


@dataclass
class EnvFeedback:
    """Feedback ``[p_robot, p_object, p_target, t]`` for a batch of envs.

    For the reach-avoid oracle ``p_object`` carries the obstacle position and
    ``p_target`` the goal.
    """

    p_robot: np.ndarray
    p_object: np.ndarray
    p_target: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.p_robot = _as_points(self.p_robot)
        n = self.p_robot.shape[0]
        self.p_object = _as_points(self.p_object, n)
        self.p_target = _as_points(self.p_target, n)
        self.t = _as_scalars(self.t, n)

    @property
    def n(self) -> int:
        return self.p_robot.shape[0]

    def validate(self):
        for name in ("p_robot", "p_object", "p_target", "t"):
            a = getattr(self, name)
            if a.shape[0] != self.n:
                raise FeedbackError(f"{name} has batch size {a.shape[0]}, expected {self.n}")
            if not np.all(np.isfinite(a)):
                raise FeedbackError(f"non-finite {name} in feedback")
        if np.any(self.t < 0):
            raise FeedbackError("feedback time must be non-negative")

    def subset(self, idx) -> "EnvFeedback":
        return EnvFeedback(self.p_robot[idx], self.p_object[idx], self.p_target[idx], self.t[idx])


@dataclass
class ReferenceState:
    """One reference (or measured) state per env; leading axis is the batch."""

    p_robot_ref: np.ndarray
    heading_ref: np.ndarray
    v_robot_ref: np.ndarray
    omega_robot_ref: np.ndarray
    p_object_ref: np.ndarray
    v_object_ref: np.ndarray

    @classmethod
    def measured(cls, p_robot, heading, p_object, v_robot=None, omega=None, v_object=None):
        """Build a measurement from plant quantities (``heading`` in radians)."""
        p_robot = _as_points(p_robot)
        n = p_robot.shape[0]
        heading = _as_scalars(heading, n)
        zeros2 = np.zeros((n, 2))
        return cls(
            p_robot_ref=p_robot,
            heading_ref=np.stack([np.cos(heading), np.sin(heading)], axis=-1),
            v_robot_ref=zeros2 if v_robot is None else _as_points(v_robot, n),
            omega_robot_ref=np.zeros(n) if omega is None else _as_scalars(omega, n),
            p_object_ref=_as_points(p_object, n),
            v_object_ref=zeros2.copy() if v_object is None else _as_points(v_object, n),
        )

    def subset(self, idx) -> "ReferenceState":
        return ReferenceState(*(getattr(self, f)[idx] for f in _STATE_FIELDS))


_STATE_FIELDS = ("p_robot_ref", "heading_ref", "v_robot_ref", "omega_robot_ref", "p_object_ref", "v_object_ref")


@dataclass
class ReferenceWindow:
    """Batched reference windows of ``H`` states each.

    Array fields have shape ``(n, H, ...)``; ``mode`` holds mode indices into
    the owning oracle's mode tuple.
    """

    p_robot_ref: np.ndarray
    heading_ref: np.ndarray
    v_robot_ref: np.ndarray
    omega_robot_ref: np.ndarray
    p_object_ref: np.ndarray
    v_object_ref: np.ndarray
    mode: np.ndarray
    t_start: np.ndarray
    dt: float

    def __len__(self) -> int:
        return self.p_robot_ref.shape[1]

    def state(self, k) -> ReferenceState:
        """Reference state at window index ``k`` (int, or one index per env)."""
        k = np.asarray(k)
        if k.ndim == 0:
            return ReferenceState(*(getattr(self, f)[:, int(k)] for f in _STATE_FIELDS))
        rows = np.arange(self.p_robot_ref.shape[0])
        return ReferenceState(*(getattr(self, f)[rows, k] for f in _STATE_FIELDS))

    def __getitem__(self, k) -> ReferenceState:
        return self.state(k)


@dataclass(frozen=True)
class Transition:
    src: int
    dst: int
    predicate: Callable[["EnvFeedback", "GuardParams"], np.ndarray]
    label: str = ""


@dataclass
class GuardParams:
    d_near: float = 0.6
    d_far: float = 1.2
    d_goal: float = 0.3
    d_exit: float = 0.6
    delta: float = 0.5
    detach_variant: str = "stop"
    kick_goal: tuple[float, float] = (5.5, 0.0)

    def __post_init__(self):
        if self.detach_variant not in ("stop", "kick"):
            raise ValueError(f"detach_variant must be 'stop' or 'kick', got {self.detach_variant!r}")
        if not self.d_far > self.d_near:
            raise ValueError("guard hysteresis needs d_far > d_near")
        if not self.d_exit >= self.d_goal:
            raise ValueError("detach exit radius must be at least d_goal")


@dataclass
class GuardTable:
    transitions: list[Transition]
    params: GuardParams


@dataclass
class ReferenceDynamics:
    reach_speed: float = 0.75
    manipulate_speed: float = 0.5
    kick_speed: float = 2.0
    standoff_distance: float = 0.4
    detach_point: tuple[float, float] = (3.2, 0.0)

    @property
    def max_robot_speed(self) -> float:
        return self.reach_speed


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def _unit(v, fallback=None):
    d = _norm(v)[..., None]
    out = np.divide(v, d, out=np.zeros_like(v), where=d > 0)
    if fallback is not None:
        out = np.where(d > 0, out, fallback)
    return out


def _ramp(current, target, step, ks):
    """Points ``current + min(k*step, |target-current|) * unit`` for each k.

    current, target: (m, 2); step: scalar or (m,); ks: (m, K) or (K,) step counts.
    Returns (m, K, 2).  Saturated points are exactly ``target``.
    """
    current = np.asarray(current, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    delta = target - current
    dist = _norm(delta)
    unit = _unit(delta)
    ks = np.broadcast_to(np.asarray(ks, dtype=np.float64), (current.shape[0], np.shape(ks)[-1]))
    travel = ks * np.reshape(step, (-1, 1))
    pts = current[:, None, :] + np.minimum(travel, dist[:, None])[..., None] * unit[:, None, :]
    saturated = travel >= dist[:, None]
    return np.where(saturated[..., None], target[:, None, :], pts)


def interpolate(current, target, speed: float, dt: float, horizon: float) -> np.ndarray:
    """Linear interpolation from ``current`` toward ``target`` at ``speed``.

    Returns ``round(horizon/dt)`` waypoints for k = 1..H, saturating at the
    target.  Accepts single points of shape (2,) or batches of shape (m, 2).
    """
    if not speed > 0 or not dt > 0 or not horizon >= dt:
        raise ValueError("interpolate needs speed > 0, dt > 0 and horizon >= dt")
    current = np.asarray(current, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if not (np.all(np.isfinite(current)) and np.all(np.isfinite(target))):
        raise ValueError("interpolate received non-finite input")
    single = current.ndim == 1
    c, g = _as_points(current), _as_points(target)
    H = int(round(horizon / dt))
    out = _ramp(c, g, speed * dt, np.arange(1, H + 1))
    return out[0] if single else out


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _finish_window(p_robot, p_object, heading_vec, dt):
    """Turn (m, H+1, 2) position tracks into per-state velocities and headings."""
    v_robot = np.diff(p_robot, axis=1) / dt
    v_object = np.diff(p_object, axis=1) / dt
    ang = np.arctan2(heading_vec[..., 1], heading_vec[..., 0])
    omega = _wrap(np.diff(ang, axis=1)) / dt
    return dict(
        p_robot_ref=p_robot[:, :-1],
        heading_ref=heading_vec[:, :-1],
        v_robot_ref=v_robot,
        omega_robot_ref=omega,
        p_object_ref=p_object[:, :-1],
        v_object_ref=v_object,
    )


def _headings(p_robot, aim, measured_heading):
    h = _unit(aim - p_robot)
    # Degenerate aim points keep the measured heading.
    return np.where(_norm(aim - p_robot)[..., None] > 1e-12, h, measured_heading[:, None, :])


def _travel_steps(start, H):
    k = np.arange(H + 1)[None, :]
    return np.maximum(k - start[:, None], 0)


def loco_window(oracle: "HybridOracle", mode, fb: EnvFeedback, measured: ReferenceState, start):
    """Reference windows for the reach / manipulate / detach oracle."""
    dyn, gp, dt, H = oracle.dynamics, oracle.guards.params, oracle.dt, oracle.horizon_steps
    m = mode.shape[0]
    p_r = measured.p_robot_ref
    p_o = measured.p_object_ref
    p_t = fb.p_target
    j = _travel_steps(start, H)
    u = _unit(p_t - p_o, fallback=_unit(p_o - p_r, fallback=np.array([1.0, 0.0])))
    standoff = dyn.standoff_distance
    robot_step = dyn.max_robot_speed * dt
    detach_pt = np.broadcast_to(np.asarray(dyn.detach_point, dtype=np.float64), (m, 2))
    goal = np.broadcast_to(np.asarray(gp.kick_goal, dtype=np.float64), (m, 2))

    name = np.array([oracle.modes[i].name for i in mode])
    reach, manip, detach = name == "reach", name == "manipulate", name == "detach"

    # reach: robot to the standoff point, object held.
    robot = _ramp(p_r, p_o - standoff * u, robot_step, j)
    obj = np.repeat(p_o[:, None, :], H + 1, axis=1)
    aim = obj.copy()

    if manip.any():
        i = np.nonzero(manip)[0]
        o_ref = _ramp(p_o[i], p_t[i], dyn.manipulate_speed * dt, j[i])
        chase = o_ref - standoff * u[i][:, None, :]
        r = np.empty_like(o_ref)
        r[:, 0] = p_r[i]
        for k in range(H):
            d = chase[:, k + 1] - r[:, k]
            dist = _norm(d)
            scale = np.where(dist > robot_step, robot_step / np.maximum(dist, 1e-300), 1.0)
            moving = (k + 1) > start[i]
            r[:, k + 1] = r[:, k] + np.where(moving[:, None], d * scale[:, None], 0.0)
        robot[i], obj[i], aim[i] = r, o_ref, o_ref

    if detach.any():
        i = np.nonzero(detach)[0]
        robot[i] = _ramp(p_r[i], detach_pt[i], robot_step, j[i])
        if gp.detach_variant == "stop":
            obj[i] = p_t[i][:, None, :]
            aim[i] = p_t[i][:, None, :]
        else:
            obj[i] = _ramp(p_o[i], goal[i], dyn.kick_speed * dt, j[i])
            aim[i] = goal[i][:, None, :]

    heading = _headings(robot, aim, measured.heading_ref)
    return _finish_window(robot, obj, heading, dt)


def reach_avoid_window(oracle: "HybridOracle", mode, fb: EnvFeedback, measured: ReferenceState, start):
    """Reference windows for the two-mode reach-avoid oracle.

    Reach ramps the robot toward the goal; avoid integrates a constant flee
    velocity directed away from the obstacle.
    """
    dyn, dt, H = oracle.dynamics, oracle.dt, oracle.horizon_steps
    p_r = measured.p_robot_ref
    p_obs = fb.p_object
    goal = fb.p_target
    j = _travel_steps(start, H)
    speed_step = dyn.reach_speed * dt
    robot = _ramp(p_r, goal, speed_step, j)
    aim = np.repeat(goal[:, None, :], H + 1, axis=1)
    avoid = np.array([oracle.modes[i].name == "avoid" for i in mode], dtype=bool)
    if avoid.any():
        i = np.nonzero(avoid)[0]
        flee = _unit(p_r[i] - p_obs[i], fallback=np.array([-1.0, 0.0]))
        robot[i] = p_r[i][:, None, :] + (j[i] * speed_step)[..., None] * flee[:, None, :]
        aim[i] = robot[i] + flee[:, None, :]
    obj = np.repeat(p_obs[:, None, :], H + 1, axis=1)
    heading = _headings(robot, aim, measured.heading_ref)
    return _finish_window(robot, obj, heading, dt)


WindowGenerator = Callable[["HybridOracle", np.ndarray, EnvFeedback, ReferenceState, np.ndarray], dict]


class HybridOracle:
    """A batched hybrid automaton used as a closed-loop reference generator."""

    def __init__(
        self,
        modes: Sequence[ModeId],
        guards: GuardTable,
        dynamics: ReferenceDynamics,
        generator: WindowGenerator,
        t_H: float = 1.0,
        dt: float = 0.05,
        n: int = 1,
        initial_mode: str = "reach",
    ):
        names = [m.name for m in modes]
        if len(set(names)) != len(names):
            raise ValueError(f"mode names must be unique, got {names}")
        if not (t_H > 0 and dt > 0):
            raise ValueError("t_H and dt must be positive")
        self.modes = tuple(modes)
        self.guards = guards
        self.dynamics = dynamics
        self.generator = generator
        self.t_H = float(t_H)
        self.dt = float(dt)
        self.horizon_steps = int(round(t_H / dt))
        self.n = int(n)
        self.initial_mode = initial_mode
        self.ranks = np.array([m.rank for m in modes], dtype=np.int64)
        self._win = None
        self.reset()

    def index(self, name: str) -> int:
        for i, m in enumerate(self.modes):
            if m.name == name:
                return i
        raise KeyError(f"unknown mode {name!r}; modes are {[m.name for m in self.modes]}")

    def reset(self, mask=None, mode: str | None = None):
        """Put (a subset of) envs back into the initial mode, dropping cached windows."""
        first = self.index(mode or self.initial_mode)
        if mask is None or self._win is None:
            H, n = self.horizon_steps, self.n
            self.current_mode = np.full(n, first, dtype=np.int64)
            self._valid = np.zeros(n, dtype=bool)
            self._t_start = np.zeros(n)
            self._win = dict(
                p_robot_ref=np.zeros((n, H, 2)),
                heading_ref=np.tile([1.0, 0.0], (n, H, 1)),
                v_robot_ref=np.zeros((n, H, 2)),
                omega_robot_ref=np.zeros((n, H)),
                p_object_ref=np.zeros((n, H, 2)),
                v_object_ref=np.zeros((n, H, 2)),
            )
            if mask is None:
                return
        mask = np.asarray(mask, dtype=bool)
        self.current_mode[mask] = first
        self._valid[mask] = False

    @property
    def current_ranks(self) -> np.ndarray:
        return self.ranks[self.current_mode]

    def mode_names(self, idx) -> list[str]:
        return [self.modes[i].name for i in np.atleast_1d(idx)]

    def phase_index(self, t) -> np.ndarray:
        step = np.rint(np.asarray(t, dtype=np.float64) / self.dt).astype(np.int64)
        return step % self.horizon_steps

    def evaluate_guards(self, fb: EnvFeedback, mask=None) -> np.ndarray:
        """Advance every env's mode (or those in ``mask``) by at most one guarded switch."""
        fb.validate()
        if fb.n != self.n:
            raise FeedbackError(f"feedback batch {fb.n} does not match oracle batch {self.n}")
        cur = self.current_mode
        nxt = cur.copy()
        fired = np.zeros(self.n, dtype=np.int64)
        live = np.ones(self.n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        for tr in self.guards.transitions:
            if tr.src == tr.dst:
                continue
            hit = live & (cur == tr.src) & np.asarray(tr.predicate(fb, self.guards.params), dtype=bool)
            fired += hit
            nxt = np.where(hit, tr.dst, nxt)
        if np.any(fired > 1):
            bad = int(np.nonzero(fired > 1)[0][0])
            raise GuardConflictError(
                f"env {bad}: {int(fired[bad])} non-self guards fired from mode {self.modes[cur[bad]].name}"
            )
        self.current_mode = nxt
        return nxt.copy()

    def query(self, fb: EnvFeedback, measured: ReferenceState | None = None, mask=None) -> ReferenceWindow:
        """Evaluate guards, then return the reference window of the active mode.

        A window is regenerated from ``measured`` when the reference cycle
        restarts (phase index 0), when the mode just changed, or when no window
        exists yet.  Regenerating mid-cycle at phase ``k`` holds the measured
        state for indices ``<= k`` so that index ``k`` is re-anchored to the
        plant.  Without ``measured`` the feedback positions are used.
        """
        if measured is None:
            measured = ReferenceState.measured(fb.p_robot, np.zeros(fb.n), fb.p_object)
        prev = self.current_mode.copy()
        mode = self.evaluate_guards(fb, mask)
        phase = self.phase_index(fb.t)
        regen = (~self._valid) | (phase == 0) | (mode != prev)
        if mask is not None:
            regen &= np.asarray(mask, dtype=bool)
        idx = np.nonzero(regen)[0]
        if idx.size:
            fresh = self.generator(self, mode[idx], fb.subset(idx), measured.subset(idx), phase[idx])
            for key, val in fresh.items():
                self._win[key][idx] = val
            self._t_start[idx] = fb.t[idx] - phase[idx] * self.dt
            self._valid[idx] = True
        return ReferenceWindow(
            **{k: v.copy() for k, v in self._win.items()},
            mode=mode,
            t_start=self._t_start.copy(),
            dt=self.dt,
        )

    def cached_window(self) -> ReferenceWindow:
        """The most recent windows, without evaluating guards."""
        return ReferenceWindow(**{k: v.copy() for k, v in self._win.items()}, mode=self.current_mode.copy(),
                               t_start=self._t_start.copy(), dt=self.dt)

    def reference(self, fb: EnvFeedback, measured: ReferenceState | None = None) -> tuple[ReferenceState, np.ndarray]:
        """Query and return only the state at each env's current phase, plus the modes."""
        win = self.query(fb, measured)
        return win.state(self.phase_index(fb.t)), win.mode


def _dist(a, b):
    return _norm(a - b)


def _ray_distance(p, origin, through):
    d = _unit(through - origin)
    rel = p - origin
    along = np.maximum(np.sum(rel * d, axis=-1), 0.0)
    return _norm(rel - along[..., None] * d)


def loco_guards(params: GuardParams) -> GuardTable:
    R, M, D = 0, 1, 2

    def reach_to_manip(fb, gp):
        return _dist(fb.p_robot, fb.p_object) <= gp.d_near

    def manip_to_reach(fb, gp):
        return (_dist(fb.p_robot, fb.p_object) > gp.d_far) & (_dist(fb.p_object, fb.p_target) > gp.d_goal)

    def manip_to_detach(fb, gp):
        return _dist(fb.p_object, fb.p_target) <= gp.d_goal

    def detach_to_reach(fb, gp):
        if gp.detach_variant == "stop":
            return _dist(fb.p_object, fb.p_target) > gp.d_exit
        goal = np.broadcast_to(np.asarray(gp.kick_goal, dtype=np.float64), fb.p_object.shape)
        return _ray_distance(fb.p_object, fb.p_target, goal) > gp.d_exit

    return GuardTable(
        transitions=[
            Transition(R, M, reach_to_manip, "reach->manipulate"),
            Transition(M, R, manip_to_reach, "manipulate->reach"),
            Transition(M, D, manip_to_detach, "manipulate->detach"),
            Transition(D, R, detach_to_reach, "detach->reach"),
        ],
        params=params,
    )


def reach_avoid_guards(params: GuardParams) -> GuardTable:
    R, A = 0, 1

    def reach_to_avoid(fb, gp):
        return _dist(fb.p_robot, fb.p_object) < gp.delta

    def avoid_to_reach(fb, gp):
        return _dist(fb.p_robot, fb.p_object) >= gp.delta

    return GuardTable(
        transitions=[Transition(R, A, reach_to_avoid, "reach->avoid"), Transition(A, R, avoid_to_reach, "avoid->reach")],
        params=params,
    )


def loco_manipulation_oracle(
    guards: GuardParams | None = None,
    dynamics: ReferenceDynamics | None = None,
    t_H: float = 1.0,
    dt: float = 0.05,
    n: int = 1,
) -> HybridOracle:
    """Three-mode oracle with ranks reach=0, manipulate=1, detach=2."""
    return HybridOracle(
        (REACH, MANIPULATE, DETACH),
        loco_guards(guards or GuardParams()),
        dynamics or ReferenceDynamics(),
        loco_window,
        t_H=t_H,
        dt=dt,
        n=n,
    )


def reach_avoid_oracle(
    guards: GuardParams | None = None,
    dynamics: ReferenceDynamics | None = None,
    t_H: float = 1.0,
    dt: float = 0.05,
    n: int = 1,
) -> HybridOracle:
    """Two-mode oracle; both modes share rank 0 so no switch is dispreferred."""
    return HybridOracle(
        (REACH, AVOID),
        reach_avoid_guards(guards or GuardParams()),
        dynamics or ReferenceDynamics(),
        reach_avoid_window,
        t_H=t_H,
        dt=dt,
        n=n,
    )


def reach_avoid_query(oracle: HybridOracle, fb: EnvFeedback, measured: ReferenceState | None = None) -> ReferenceWindow:
    return oracle.query(fb, measured)


__all__ = [
    "AVOID",
    "DETACH",
    "EnvFeedback",
    "FeedbackError",
    "GuardConflictError",
    "GuardParams",
    "GuardTable",
    "HybridOracle",
    "MANIPULATE",
    "ModeId",
    "REACH",
    "ReferenceDynamics",
    "ReferenceState",
    "ReferenceWindow",
    "Transition",
    "interpolate",
    "loco_manipulation_oracle",
    "reach_avoid_oracle",
    "reach_avoid_query",
]
