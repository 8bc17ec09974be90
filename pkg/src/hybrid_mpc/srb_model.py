"""Exact single-rigid-body dynamics, kinematics and feasibility predicates.

This module is the ground truth the relaxation is checked against. The
constraint builder in :mod:`hybrid_mpc.builder` emits the same discrete
equations, so a trajectory produced by :func:`simulate_step` satisfies
every dynamics equality of the compiled problem.

Discretisation (forward Euler, knot spacing ``params.dt``)::

    p+     = p + v dt
    v+     = v + (sum f / m - g) dt
    Theta+ = Theta + Theta_dot dt
    w      = E(Theta) Theta_dot
    w+     = w + I^-1 (sum r x f - w x I w) dt
    Theta_dot+ = E(Theta+)^-1 w+

with ``r_i = p_w,i - p`` the world-frame moment arm of toe ``i`` and a
constant inertia. ``g`` points up (``(0, 0, 9.81)``), so gravity enters
with a minus sign.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from hybrid_mpc.types import FootState, SrbParams, SrbState

SINGULAR_COS = 1e-9


class SingularKinematics(ValueError):
    """The Euler-rate map cannot be inverted (pitch at +-pi/2)."""


def rotation_matrix(theta: Sequence[float]) -> np.ndarray:
    """Body-to-world rotation for Z-Y-X Euler angles ``(phi, theta, psi)``."""
    phi, th, psi = (float(a) for a in theta)
    sf, cf = np.sin(phi), np.cos(phi)
    st, ct = np.sin(th), np.cos(th)
    sp, cp = np.sin(psi), np.cos(psi)
    return np.array([
        [ct * cp, sf * st * cp - sp * cf, sf * sp + st * cf * cp],
        [sp * ct, cf * cp + sf * st * sp, st * sp * cf - sf * cp],
        [-st, sf * ct, cf * ct],
    ])


def euler_rate_map(theta: Sequence[float]) -> np.ndarray:
    """Matrix ``E`` with ``omega = E @ theta_dot``.

    ``det E = cos(theta)``; the map is singular at pitch +-pi/2 and this
    function does not trap that case.
    """
    _, th, psi = (float(a) for a in theta)
    st, ct = np.sin(th), np.cos(th)
    sp, cp = np.sin(psi), np.cos(psi)
    return np.array([
        [ct * cp, -sp, 0.0],
        [ct * sp, cp, 0.0],
        [-st, 0.0, 1.0],
    ])


def angular_velocity(state: SrbState) -> np.ndarray:
    return euler_rate_map(state.theta) @ np.asarray(state.theta_dot, dtype=float)


def moment_arms(state: SrbState, feet: FootState) -> np.ndarray:
    """``r_i = p_w,i - p`` for every leg, shape ``(n_legs, 3)``."""
    return feet.toe_array() - np.asarray(state.p, dtype=float)


def cross_matrix(r: Sequence[float]) -> np.ndarray:
    x, y, z = (float(c) for c in r)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def net_wrench(state: SrbState, feet: FootState) -> Tuple[np.ndarray, np.ndarray]:
    forces = feet.force_array()
    arms = moment_arms(state, feet)
    return forces.sum(axis=0), np.cross(arms, forces).sum(axis=0)


def dynamics_residual(
    state: SrbState,
    feet: FootState,
    accel: Tuple[Sequence[float], Sequence[float]],
    params: SrbParams,
) -> np.ndarray:
    """Newton/Euler residual ``(m a - sum f + m g, I w_dot + w x I w - sum r x f)``.

    ``accel`` is the pair (linear acceleration, angular acceleration). The
    residual is zero exactly when the dynamics hold.
    """
    a = np.asarray(accel[0], dtype=float)
    w_dot = np.asarray(accel[1], dtype=float)
    inertia = params.inertia_matrix()
    w = angular_velocity(state)
    force, torque = net_wrench(state, feet)
    linear = params.mass * a - force + params.mass * params.gravity()
    angular = inertia @ w_dot + np.cross(w, inertia @ w) - torque
    return np.concatenate([linear, angular])


def force_jacobian(state: SrbState, feet: FootState) -> np.ndarray:
    """Derivative of :func:`dynamics_residual` with respect to the stacked toe forces."""
    arms = moment_arms(state, feet)
    blocks = [np.vstack([-np.eye(3), -cross_matrix(r)]) for r in arms]
    return np.hstack(blocks)


def friction_feasible(f: Sequence[float], mu: float) -> bool:
    """Exact friction cone ``f_z >= mu * sqrt(f_x^2 + f_y^2)``."""
    fx, fy, fz = (float(c) for c in f)
    return fz >= mu * float(np.hypot(fx, fy))


def friction_pyramid_rows(mu: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inner four-face pyramid as ``lower <= A @ f <= upper``.

    ``|f_x| <= (mu / sqrt 2) f_z``, ``|f_y| <= (mu / sqrt 2) f_z``,
    ``f_z >= 0``. Every force inside the pyramid lies inside the cone.
    """
    k = mu / np.sqrt(2.0)
    a = np.array([
        [1.0, 0.0, -k],
        [-1.0, 0.0, -k],
        [0.0, 1.0, -k],
        [0.0, -1.0, -k],
        [0.0, 0.0, 1.0],
    ])
    lower = np.array([-np.inf, -np.inf, -np.inf, -np.inf, 0.0])
    upper = np.array([0.0, 0.0, 0.0, 0.0, np.inf])
    return a, lower, upper


def simulate_step(state: SrbState, feet: FootState, params: SrbParams) -> SrbState:
    """Advance the plant by one knot with the contact forces held constant."""
    p, v, theta, theta_dot = state.arrays()
    inertia = params.inertia_matrix()
    force, torque = net_wrench(state, feet)

    w = euler_rate_map(theta) @ theta_dot
    a = force / params.mass - params.gravity()
    w_dot = np.linalg.solve(inertia, torque - np.cross(w, inertia @ w))

    p_next = p + v * params.dt
    v_next = v + a * params.dt
    theta_next = theta + theta_dot * params.dt
    w_next = w + w_dot * params.dt

    if abs(np.cos(theta_next[1])) < SINGULAR_COS:
        raise SingularKinematics(f"pitch {theta_next[1]:.6f} rad makes the Euler-rate map singular")
    theta_dot_next = np.linalg.solve(euler_rate_map(theta_next), w_next)
    return SrbState.from_arrays(p_next, v_next, theta_next, theta_dot_next)


def rollout(state: SrbState, feet_seq: Sequence[FootState], params: SrbParams) -> List[SrbState]:
    """States ``x[0] .. x[len(feet_seq)]`` under the given per-knot contacts."""
    states = [state]
    for feet in feet_seq:
        states.append(simulate_step(states[-1], feet, params))
    return states


def workspace_offset(state: SrbState, toe_w: Sequence[float], leg: int,
                     params: SrbParams) -> np.ndarray:
    """``R^T (p_w - H_w - R o)`` with ``H_w = p + R H_b``; body-frame offset from the box centre."""
    rot = rotation_matrix(state.theta)
    p = np.asarray(state.p, dtype=float)
    shoulder_w = p + rot @ np.asarray(params.shoulder_offsets[leg], dtype=float)
    hip = np.asarray(params.hip_offsets[leg], dtype=float)
    return rot.T @ (np.asarray(toe_w, dtype=float) - shoulder_w - rot @ hip)


def workspace_feasible(state: SrbState, toe_w: Sequence[float], leg: int,
                       params: SrbParams, tol: float = 1e-12) -> bool:
    offset = workspace_offset(state, toe_w, leg, params)
    return bool(np.all(np.abs(offset) <= np.asarray(params.box_half_extents) + tol))
