"""Model-based reference tracker used as a feasibility check and test fixture."""

from __future__ import annotations

import numpy as np

from .env import GuidedEnv


def pd_tracker(env: GuidedEnv, kp: float = 30.0, kd: float = 8.0, ko: float = 6.0) -> np.ndarray:
    """Normalised wrench steering each robot toward the next reference state.

    Uses privileged access to the oracle window, which a learned policy never sees.
    """
    w = env.world
    win = env.oracle.cached_window()
    k = np.minimum(env.oracle.phase_index(w.t) + 1, env.H - 1)
    ref = win.state(k)
    r = w.robot
    force = r.mass * (kp * (ref.p_robot_ref - r.p) + kd * (ref.v_robot_ref - r.v))
    target = np.arctan2(ref.heading_ref[:, 1], ref.heading_ref[:, 0])
    err = (target - r.heading + np.pi) % (2 * np.pi) - np.pi
    torque = r.inertia * (ko * ko * err - 2.0 * ko * r.omega)
    return np.concatenate([force, torque[:, None]], axis=1) / env.spec.wrench_limits
