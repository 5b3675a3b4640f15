"""Constant turn rate and velocity (CTRV) motion model.

The model integrates a pose forward by ``dt`` seconds under constant forward
speed ``v`` and turn rate ``omega``. Below ``EPS_OMEGA`` rad/s the closed form
divides by a vanishing ``omega``; there we switch to its second-order Taylor
expansion, which keeps both the prediction and its Jacobians continuous
across the switch.

All array functions broadcast over leading dimensions: ``pose`` is
``(..., 3)``, ``vel`` is ``(..., 2)`` and ``dt`` broadcasts against ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose2, Velocity2, wrap_angles

EPS_OMEGA = 1e-4


@dataclass(frozen=True)
class CtrvJacobians:
    d_pose: np.ndarray  # (3, 3)
    d_vel: np.ndarray  # (3, 2)


def predict_arrays(pose, vel, dt, eps_omega: float = EPS_OMEGA) -> np.ndarray:
    pose = np.asarray(pose, dtype=float)
    vel = np.asarray(vel, dtype=float)
    dt = np.asarray(dt, dtype=float)
    x, y, th = pose[..., 0], pose[..., 1], pose[..., 2]
    v, w = vel[..., 0], vel[..., 1]
    straight = np.abs(w) <= eps_omega
    w_safe = np.where(straight, 1.0, w)
    a = w * dt
    th1 = th + a
    s0, c0 = np.sin(th), np.cos(th)
    s1, c1 = np.sin(th1), np.cos(th1)

    dx_turn = v / w_safe * (s1 - s0)
    dy_turn = v / w_safe * (c0 - c1)
    vdt = v * dt
    dx_lin = vdt * (c0 - 0.5 * a * s0 - a * a / 6.0 * c0)
    dy_lin = vdt * (s0 + 0.5 * a * c0 - a * a / 6.0 * s0)

    shape = np.broadcast_shapes(x.shape, v.shape, dt.shape)
    out = np.empty(shape + (3,))
    out[..., 0] = x + np.where(straight, dx_lin, dx_turn)
    out[..., 1] = y + np.where(straight, dy_lin, dy_turn)
    out[..., 2] = wrap_angles(th1)
    return out


def jacobians_arrays(pose, vel, dt, eps_omega: float = EPS_OMEGA) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(d_pose, d_vel)`` with shapes ``(..., 3, 3)`` and ``(..., 3, 2)``."""
    pose = np.asarray(pose, dtype=float)
    vel = np.asarray(vel, dtype=float)
    dt = np.asarray(dt, dtype=float)
    th = pose[..., 2]
    v, w = vel[..., 0], vel[..., 1]
    straight = np.abs(w) <= eps_omega
    w_safe = np.where(straight, 1.0, w)
    a = w * dt
    th1 = th + a
    s0, c0 = np.sin(th), np.cos(th)
    s1, c1 = np.sin(th1), np.cos(th1)
    shape = np.broadcast_shapes(th.shape, v.shape, dt.shape)
    dt = np.broadcast_to(dt, shape)

    # closed form
    inv_w = 1.0 / w_safe
    dxdth_t = v * inv_w * (c1 - c0)
    dydth_t = v * inv_w * (s1 - s0)
    dxdv_t = inv_w * (s1 - s0)
    dydv_t = inv_w * (c0 - c1)
    dxdw_t = -v * inv_w * inv_w * (s1 - s0) + v * inv_w * dt * c1
    dydw_t = -v * inv_w * inv_w * (c0 - c1) + v * inv_w * dt * s1

    # Taylor limit
    vdt = v * dt
    dxdth_l = vdt * (-s0 - 0.5 * a * c0 + a * a / 6.0 * s0)
    dydth_l = vdt * (c0 - 0.5 * a * s0 - a * a / 6.0 * c0)
    dxdv_l = dt * (c0 - 0.5 * a * s0 - a * a / 6.0 * c0)
    dydv_l = dt * (s0 + 0.5 * a * c0 - a * a / 6.0 * s0)
    dxdw_l = vdt * (-0.5 * dt * s0 - a * dt / 3.0 * c0)
    dydw_l = vdt * (0.5 * dt * c0 - a * dt / 3.0 * s0)

    Jp = np.zeros(shape + (3, 3))
    Jp[..., 0, 0] = 1.0
    Jp[..., 1, 1] = 1.0
    Jp[..., 2, 2] = 1.0
    Jp[..., 0, 2] = np.where(straight, dxdth_l, dxdth_t)
    Jp[..., 1, 2] = np.where(straight, dydth_l, dydth_t)

    Jv = np.zeros(shape + (3, 2))
    Jv[..., 0, 0] = np.where(straight, dxdv_l, dxdv_t)
    Jv[..., 1, 0] = np.where(straight, dydv_l, dydv_t)
    Jv[..., 0, 1] = np.where(straight, dxdw_l, dxdw_t)
    Jv[..., 1, 1] = np.where(straight, dydw_l, dydw_t)
    Jv[..., 2, 1] = dt
    return Jp, Jv


def ctrv_predict(pose: Pose2, vel: Velocity2, dt: float, eps_omega: float = EPS_OMEGA) -> Pose2:
    """Propagate ``pose`` by ``dt`` seconds at constant ``vel``."""
    if dt < 0.0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    return Pose2.from_array(predict_arrays(pose.as_array(), vel.as_array(), dt, eps_omega))


def ctrv_jacobians(pose: Pose2, vel: Velocity2, dt: float, eps_omega: float = EPS_OMEGA) -> CtrvJacobians:
    if dt < 0.0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    Jp, Jv = jacobians_arrays(pose.as_array(), vel.as_array(), dt, eps_omega)
    return CtrvJacobians(d_pose=Jp, d_vel=Jv)
