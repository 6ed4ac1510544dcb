"""Planar rigid-body worlds for the reach-avoid, soccer and move-box tasks.

The robot is a disc actuated by a planar wrench (force x, force y, torque).
Objects are a ball (disc with quadratic drag and rolling resistance), a box
(oriented rectangle with linear ground damping) or, for reach-avoid, a static
point obstacle.  Everything is batched over ``n`` envs and fully deterministic.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TASKS = ("reach_avoid", "soccer_stop", "soccer_kick", "move_box")
GRAVITY = 9.81


@dataclass
class TaskSpec:
    """Task variant: geometry, initial-state distribution and physical constants."""

    task: str = "soccer_stop"
    arena: tuple[float, float] = (6.0, 4.0)
    target: tuple[float, float] = (4.0, 0.0)
    goal_center: tuple[float, float] = (4.0, 0.0)
    goal_radius: float = 0.3
    detach_center: tuple[float, float] = (3.2, 0.0)
    detach_radius: float = 0.6
    init_randomization: float = 0.05
    episode_max_steps: int = 300
    dt: float = 0.05
    object_distance: float = 2.0
    bearing_halfwidth: float = np.pi / 4
    # reach-avoid obstacle placement: x range and |y| range of the obstacle
    obstacle_x: tuple[float, float] = (1.2, 1.8)
    obstacle_y: tuple[float, float] = (0.15, 0.6)
    robot_mass: float = 10.0
    robot_radius: float = 0.25
    ball_mass: float = 0.45
    ball_radius: float = 0.11
    ball_restitution: float = 0.5
    drag_coefficient: float = 0.5
    rolling_resistance: float = 0.05
    box_mass: float = 2.0
    box_half_extents: tuple[float, float] = (0.25, 0.25)
    box_restitution: float = 0.2
    box_friction_mu: float = 0.5
    ground_mu: float = 0.3
    force_limit: float = 40.0
    torque_limit: float = 10.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.episode_max_steps > 0:
            raise ValueError("episode_max_steps must be positive")
        ax, ay = self.arena
        for name in ("target", "goal_center", "detach_center"):
            px, py = getattr(self, name)
            if abs(px) > ax or abs(py) > ay:
                raise ValueError(f"{name} {getattr(self, name)} lies outside the arena {self.arena}")
        if not 0.0 <= self.ball_restitution <= 1.0 or not 0.0 <= self.box_restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
        if min(self.robot_mass, self.ball_mass, self.box_mass, self.robot_radius, self.ball_radius) <= 0:
            raise ValueError("masses and radii must be positive")

    @property
    def wrench_limits(self) -> np.ndarray:
        return np.array([self.force_limit, self.force_limit, self.torque_limit])

    @property
    def robot_inertia(self) -> float:
        return 0.5 * self.robot_mass * self.robot_radius**2

    @property
    def object_kind(self) -> str:
        return {"reach_avoid": "obstacle", "move_box": "box"}.get(self.task, "ball")


def make_task(name: str, **overrides) -> TaskSpec:
    """Default layout for each task variant."""
    if name == "reach_avoid":
        base = dict(
            target=(3.0, 0.0), goal_center=(3.0, 0.0), goal_radius=0.3,
            detach_center=(3.0, 0.0), detach_radius=0.3, episode_max_steps=200,
        )
    elif name == "soccer_stop":
        base = dict(target=(4.0, 0.0), goal_center=(4.0, 0.0), goal_radius=0.3,
                    detach_center=(3.2, 0.0), detach_radius=0.6, episode_max_steps=300)
    elif name == "soccer_kick":
        base = dict(target=(3.5, 0.0), goal_center=(5.5, 0.0), goal_radius=0.5,
                    detach_center=(3.0, 0.0), detach_radius=0.6, episode_max_steps=300,
                    bearing_halfwidth=0.0)
    elif name == "move_box":
        base = dict(target=(4.0, 0.0), goal_center=(4.0, 0.0), goal_radius=0.3,
                    detach_center=(3.0, 0.0), detach_radius=0.6, episode_max_steps=400)
    else:
        raise ValueError(f"unknown task {name!r}; expected one of {TASKS}")
    base.update(overrides)
    return TaskSpec(task=name, **base)


@dataclass
class RobotBody:
    p: np.ndarray
    heading: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    mass: float
    inertia: float
    radius: float
    u_prev: np.ndarray

    def copy(self) -> "RobotBody":
        return replace(self, p=self.p.copy(), heading=self.heading.copy(), v=self.v.copy(),
                       omega=self.omega.copy(), u_prev=self.u_prev.copy())


@dataclass
class ObjectBody:
    kind: str
    p: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    mass: float
    radius: float = 0.0
    half_extents: tuple[float, float] = (0.0, 0.0)
    restitution: float = 0.5
    friction_mu: float = 0.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("object mass must be positive")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")

    @property
    def inertia(self) -> float:
        if self.kind == "box":
            hx, hy = self.half_extents
            return self.mass * (hx * hx + hy * hy) / 3.0
        return 0.4 * self.mass * self.radius**2

    def copy(self) -> "ObjectBody":
        return replace(self, p=self.p.copy(), v=self.v.copy(), theta=self.theta.copy(), omega=self.omega.copy())


@dataclass
class PlanarWorldState:
    robot: RobotBody
    object: ObjectBody | None
    t: np.ndarray
    step_index: np.ndarray
    contact_count: np.ndarray
    obstacle: np.ndarray | None = None
    fault: np.ndarray = field(default=None)
    contact: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.robot.p.shape[0]
        if self.fault is None:
            self.fault = np.zeros(n, dtype=bool)
        if self.contact is None:
            self.contact = np.zeros(n, dtype=bool)

    @property
    def n(self) -> int:
        return self.robot.p.shape[0]

    @property
    def object_position(self) -> np.ndarray:
        return self.obstacle if self.object is None else self.object.p

    @property
    def object_velocity(self) -> np.ndarray:
        return np.zeros_like(self.robot.v) if self.object is None else self.object.v

    def copy(self) -> "PlanarWorldState":
        return PlanarWorldState(
            robot=self.robot.copy(),
            object=None if self.object is None else self.object.copy(),
            t=self.t.copy(),
            step_index=self.step_index.copy(),
            contact_count=self.contact_count.copy(),
            obstacle=None if self.obstacle is None else self.obstacle.copy(),
            fault=self.fault.copy(),
            contact=self.contact.copy(),
        )


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return c, s


def _seed_rngs(seed, n):
    seeds = np.atleast_1d(np.asarray(seed, dtype=np.int64))
    if seeds.size == 1 and n > 1:
        return [np.random.default_rng([int(seeds[0]), i]) for i in range(n)]
    return [np.random.default_rng(int(s)) for s in seeds]


def empty_state(spec: TaskSpec, n: int) -> PlanarWorldState:
    robot = RobotBody(
        p=np.zeros((n, 2)), heading=np.zeros(n), v=np.zeros((n, 2)), omega=np.zeros(n),
        mass=spec.robot_mass, inertia=spec.robot_inertia, radius=spec.robot_radius, u_prev=np.zeros((n, 3)),
    )
    kind = spec.object_kind
    obj, obstacle = None, None
    if kind == "ball":
        obj = ObjectBody("ball", np.zeros((n, 2)), np.zeros((n, 2)), np.zeros(n), np.zeros(n),
                         mass=spec.ball_mass, radius=spec.ball_radius, restitution=spec.ball_restitution)
    elif kind == "box":
        obj = ObjectBody("box", np.zeros((n, 2)), np.zeros((n, 2)), np.zeros(n), np.zeros(n),
                         mass=spec.box_mass, half_extents=tuple(spec.box_half_extents),
                         restitution=spec.box_restitution, friction_mu=spec.box_friction_mu)
    else:
        obstacle = np.zeros((n, 2))
    return PlanarWorldState(robot, obj, np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64),
                            obstacle=obstacle)


def reset(spec: TaskSpec, seed, n: int | None = None, start_mode: str = "reach",
          randomization: float | None = None, d_near: float = 0.6) -> PlanarWorldState:
    """Fresh episodes, one per seed.

    ``seed`` may be a single integer (one env, or ``n`` envs with derived
    streams) or one integer per env.  ``start_mode`` places bodies in a state
    appropriate for a mode-specific baseline policy: ``manipulate`` puts the
    robot within ``d_near`` behind the object, ``detach`` puts the object at
    the target.
    """
    seeds = np.atleast_1d(np.asarray(seed, dtype=np.int64))
    n = int(n or seeds.size)
    state = empty_state(spec, n)
    reset_into(state, spec, np.arange(n), _seed_rngs(seed, n), start_mode, randomization, d_near)
    return state


def reset_into(state: PlanarWorldState, spec: TaskSpec, idx, rngs, start_mode: str = "reach",
               randomization: float | None = None, d_near: float = 0.6):
    """Re-initialise envs ``idx`` in place, drawing from one generator per env."""
    w = spec.init_randomization if randomization is None else randomization
    target = np.asarray(spec.target, dtype=np.float64)
    r, o = state.robot, state.object
    for i, rng in zip(np.atleast_1d(idx), rngs):
        noise = rng.uniform(-w, w, size=3) if w > 0 else np.zeros(3)
        p_robot = noise[:2].copy()
        heading = noise[2]
        if spec.task == "reach_avoid":
            ox = rng.uniform(*spec.obstacle_x)
            oy = rng.uniform(*spec.obstacle_y) * rng.choice([-1.0, 1.0])
            state.obstacle[i] = (ox, oy)
            p_obj = state.obstacle[i]
        else:
            if spec.bearing_halfwidth > 0:
                bearing = rng.uniform(-spec.bearing_halfwidth, spec.bearing_halfwidth)
            else:
                goal_dir = np.asarray(spec.goal_center) - p_robot
                bearing = float(np.arctan2(goal_dir[1], goal_dir[0]))
            p_obj = spec.object_distance * np.array([np.cos(bearing), np.sin(bearing)])
            if start_mode == "manipulate":
                u = target - p_obj
                u /= max(np.linalg.norm(u), 1e-12)
                contact = spec.robot_radius + _object_extent(spec)
                gap = rng.uniform(contact + 0.02, d_near)
                lateral = rng.uniform(-w, w) * np.array([-u[1], u[0]])
                back = p_obj - gap * u + lateral
                # keep the robot within d_near of the object
                rel = back - p_obj
                dist = np.linalg.norm(rel)
                p_robot = p_obj + rel * min(1.0, (d_near - 1e-6) / max(dist, 1e-12))
                heading = np.arctan2(u[1], u[0]) + noise[2]
            elif start_mode == "detach":
                p_obj = target + rng.uniform(-w, w, size=2) * 0.2
                away = np.asarray(spec.detach_center) - target
                away /= max(np.linalg.norm(away), 1e-12)
                p_robot = target + away * (spec.robot_radius + _object_extent(spec) + 0.1) + noise[:2]
                heading = np.arctan2(-away[1], -away[0]) + noise[2]
            elif start_mode != "reach":
                raise ValueError(f"unknown start_mode {start_mode!r}")
            o.p[i] = p_obj
            o.v[i] = 0.0
            o.theta[i] = 0.0
            o.omega[i] = 0.0
        r.p[i] = p_robot
        r.heading[i] = heading
        r.v[i] = 0.0
        r.omega[i] = 0.0
        r.u_prev[i] = 0.0
        state.t[i] = 0.0
        state.step_index[i] = 0
        state.contact_count[i] = 0
        state.fault[i] = False
        state.contact[i] = False


def _object_extent(spec: TaskSpec) -> float:
    if spec.object_kind == "box":
        return float(min(spec.box_half_extents))
    return spec.ball_radius


def drag_force(v_ball, coefficient: float = 0.5) -> np.ndarray:
    """Quadratic drag ``-c |v|^2`` directed against the velocity."""
    v = np.asarray(v_ball, dtype=np.float64)
    speed = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    return -coefficient * speed * v


def resolve_contact(robot: RobotBody, obj: ObjectBody) -> np.ndarray:
    """Separate penetrating robot/object pairs and apply collision impulses in place.

    Returns the per-env contact flag.  The normal impulse is
    ``j = -(1+e) (v_rel . n) / K`` with ``K`` the effective inverse mass along
    the normal (for a ball ``1/m_robot + 1/m_object``), applied only while the
    bodies approach.  Boxes also receive a Coulomb tangential impulse bounded
    by ``mu * j`` and the resulting spin.
    """
    if obj.kind == "box":
        return _box_contact(robot, obj)
    d = obj.p - robot.p
    dist = np.sqrt(np.sum(d * d, axis=-1))
    reach = robot.radius + obj.radius
    hit = dist < reach
    if not hit.any():
        return hit
    i = np.nonzero(hit)[0]
    n = np.divide(d[i], dist[i][:, None], out=np.tile([1.0, 0.0], (i.size, 1)), where=dist[i][:, None] > 0)
    pen = reach - dist[i]
    _warn_penetration(pen, min(robot.radius, obj.radius))
    im_r, im_o = 1.0 / robot.mass, 1.0 / obj.mass
    k = im_r + im_o
    robot.p[i] -= n * (pen * im_r / k)[:, None]
    obj.p[i] += n * (pen * im_o / k)[:, None]
    vn = np.sum((obj.v[i] - robot.v[i]) * n, axis=-1)
    j = np.where(vn < 0, -(1.0 + obj.restitution) * vn / k, 0.0)
    obj.v[i] += n * (j * im_o)[:, None]
    robot.v[i] -= n * (j * im_r)[:, None]
    return hit


def _warn_penetration(pen, smaller_radius):
    if np.any(pen > 0.5 * smaller_radius):
        log.debug("deep penetration %.4f m (threshold %.4f m)", float(pen.max()), 0.5 * smaller_radius)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _box_contact(robot: RobotBody, box: ObjectBody) -> np.ndarray:
    hx, hy = box.half_extents
    c, s = _rot(box.theta)
    rel = robot.p - box.p
    # robot centre in the box frame
    lx = c * rel[:, 0] + s * rel[:, 1]
    ly = -s * rel[:, 0] + c * rel[:, 1]
    qx, qy = np.clip(lx, -hx, hx), np.clip(ly, -hy, hy)
    ex, ey = lx - qx, ly - qy
    gap = np.sqrt(ex * ex + ey * ey)
    inside = gap == 0
    hit = inside | (gap < robot.radius)
    if not hit.any():
        return hit
    # outward normal (box -> robot) in the box frame
    nx = np.divide(ex, gap, out=np.zeros_like(ex), where=~inside)
    ny = np.divide(ey, gap, out=np.zeros_like(ey), where=~inside)
    pen = robot.radius - gap
    if inside.any():
        fx, fy = hx - np.abs(lx), hy - np.abs(ly)
        use_x = inside & (fx <= fy)
        use_y = inside & ~(fx <= fy)
        nx = np.where(use_x, np.sign(lx) + (lx == 0), nx)
        ny = np.where(use_y, np.sign(ly) + (ly == 0), ny)
        nx = np.where(use_y, 0.0, nx)
        ny = np.where(use_x, 0.0, ny)
        qx = np.where(use_x, np.sign(nx) * hx, qx)
        qy = np.where(use_y, np.sign(ny) * hy, qy)
        pen = np.where(use_x, robot.radius + fx, np.where(use_y, robot.radius + fy, pen))
    i = np.nonzero(hit)[0]
    # world-frame normal pointing from robot to box, contact arm from box centre
    n = -np.stack([c[i] * nx[i] - s[i] * ny[i], s[i] * nx[i] + c[i] * ny[i]], axis=-1)
    arm = np.stack([c[i] * qx[i] - s[i] * qy[i], s[i] * qx[i] + c[i] * qy[i]], axis=-1)
    pen = pen[i]
    _warn_penetration(pen, min(robot.radius, min(hx, hy)))
    im_r, im_b, ii_b = 1.0 / robot.mass, 1.0 / box.mass, 1.0 / box.inertia
    lin = im_r + im_b
    robot.p[i] -= n * (pen * im_r / lin)[:, None]
    box.p[i] += n * (pen * im_b / lin)[:, None]

    w = box.omega[i]
    v_box_c = box.v[i] + w[:, None] * np.stack([-arm[:, 1], arm[:, 0]], axis=-1)
    v_rel = v_box_c - robot.v[i]
    vn = np.sum(v_rel * n, axis=-1)
    rn = _cross(arm, n)
    kn = lin + rn * rn * ii_b
    jn = np.where(vn < 0, -(1.0 + box.restitution) * vn / kn, 0.0)
    tang = np.stack([-n[:, 1], n[:, 0]], axis=-1)
    vt = np.sum(v_rel * tang, axis=-1)
    rt = _cross(arm, tang)
    kt = lin + rt * rt * ii_b
    jt = np.clip(-vt / kt, -box.friction_mu * jn, box.friction_mu * jn)
    impulse = n * jn[:, None] + tang * jt[:, None]
    box.v[i] += impulse * im_b
    box.omega[i] += _cross(arm, impulse) * ii_b
    robot.v[i] -= impulse * im_r
    return hit


def _advance_ball(obj: ObjectBody, spec: TaskSpec):
    dt = spec.dt
    speed = np.sqrt(np.sum(obj.v * obj.v, axis=-1))
    decel = spec.drag_coefficient * speed**2 / obj.mass + spec.rolling_resistance * GRAVITY
    new_speed = np.maximum(speed - decel * dt, 0.0)
    ratio = np.divide(new_speed, speed, out=np.zeros_like(speed), where=speed > 0)
    obj.v *= ratio[:, None]
    obj.p += obj.v * dt


def _advance_box(obj: ObjectBody, spec: TaskSpec):
    decay = np.exp(-spec.ground_mu * GRAVITY * spec.dt)
    obj.v *= decay
    obj.omega *= decay
    obj.p += obj.v * spec.dt
    obj.theta = (obj.theta + obj.omega * spec.dt + np.pi) % (2 * np.pi) - np.pi


def clamp_action(action, spec: TaskSpec) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite action")
    lim = spec.wrench_limits
    return np.clip(a, -lim, lim)


def step(state: PlanarWorldState, action, spec: TaskSpec, active_mode=None, manipulate_index: int = 1) -> PlanarWorldState:
    """Advance every env by one control step, in place; returns ``state``.

    ``active_mode`` holds per-env oracle mode indices and only gates contact
    counting (contacts are counted while in the manipulate mode).
    """
    u = clamp_action(action, spec).reshape(state.n, 3)
    r = state.robot
    dt = spec.dt
    r.v += u[:, :2] / r.mass * dt
    r.omega += u[:, 2] / r.inertia * dt
    r.p += r.v * dt
    r.heading = (r.heading + r.omega * dt + np.pi) % (2 * np.pi) - np.pi
    obj = state.object
    if obj is not None:
        if obj.kind == "ball":
            _advance_ball(obj, spec)
        else:
            _advance_box(obj, spec)
        state.contact = resolve_contact(r, obj)
        if active_mode is not None:
            state.contact_count += state.contact & (np.asarray(active_mode) == manipulate_index)
    r.u_prev = u.copy()
    state.step_index += 1
    state.t = state.step_index * dt
    limit = 10.0 * max(spec.arena)
    coords = [r.p, r.v] + ([] if obj is None else [obj.p, obj.v])
    bad = np.zeros(state.n, dtype=bool)
    for a in coords:
        bad |= ~np.all(np.isfinite(a), axis=-1) | np.any(np.abs(a) > limit, axis=-1)
    state.fault |= bad
    return state


class Status(enum.IntEnum):
    RUNNING = 0
    SUCCESS = 1
    OUT_OF_ARENA = 2
    DIVERGED = 3
    COLLISION = 4
    TIMEOUT = 5

    @property
    def is_failure(self) -> bool:
        return self >= Status.OUT_OF_ARENA

    @property
    def reason(self) -> str:
        return self.name.lower()


REST_SPEED = 0.05


def success_mask(state: PlanarWorldState, spec: TaskSpec) -> np.ndarray:
    r = state.robot
    in_detach = np.linalg.norm(r.p - np.asarray(spec.detach_center), axis=-1) <= spec.detach_radius
    if spec.task == "reach_avoid":
        return np.linalg.norm(r.p - np.asarray(spec.target), axis=-1) <= spec.goal_radius
    p_obj = state.object.p
    in_goal = np.linalg.norm(p_obj - np.asarray(spec.goal_center), axis=-1) <= spec.goal_radius
    if spec.task == "soccer_kick":
        return in_goal & in_detach
    at_rest = np.linalg.norm(state.object.v, axis=-1) <= REST_SPEED
    return in_goal & at_rest & in_detach


def episode_status(state: PlanarWorldState, spec: TaskSpec, mode_trace=None) -> np.ndarray:
    """Per-env :class:`Status` codes (as an int array).

    Precedence: divergence, leaving the arena, obstacle collision, success,
    then timeout.  ``mode_trace`` is accepted for symmetry with the episode
    bookkeeping but does not influence the verdict.
    """
    r = state.robot
    out = np.full(state.n, Status.RUNNING, dtype=np.int64)
    ax, ay = spec.arena
    outside = (np.abs(r.p[:, 0]) > ax) | (np.abs(r.p[:, 1]) > ay)
    timeout = state.step_index >= spec.episode_max_steps
    out[timeout] = Status.TIMEOUT
    out[success_mask(state, spec)] = Status.SUCCESS
    if spec.task == "reach_avoid":
        collided = np.linalg.norm(r.p - state.obstacle, axis=-1) < spec.robot_radius
        out[collided] = Status.COLLISION
    out[outside] = Status.OUT_OF_ARENA
    out[state.fault] = Status.DIVERGED
    return out


TRAJECTORY_COLUMNS = ("step", "t", "mode", "px", "py", "heading", "vx", "vy", "omega",
                      "ox", "oy", "ovx", "ovy", "fx", "fy", "tau", "contact")


def trajectory_row(state: PlanarWorldState, i: int, mode: str) -> list:
    r = state.robot
    op, ov = state.object_position[i], state.object_velocity[i]
    return [int(state.step_index[i]), state.t[i], mode, r.p[i, 0], r.p[i, 1], r.heading[i], r.v[i, 0], r.v[i, 1],
            r.omega[i], op[0], op[1], ov[0], ov[1], r.u_prev[i, 0], r.u_prev[i, 1], r.u_prev[i, 2],
            int(state.contact[i])]


def _fmt(x):
    if isinstance(x, (str, int, np.integer)):
        return str(x)
    return f"{float(x):.9g}"


def write_trajectory_csv(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path
