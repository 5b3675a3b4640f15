"""Planar rigid transforms and Gaussian noise models.

Poses are SE(2) elements ``(x, y, yaw)``. The residual convention used
throughout the package is componentwise subtraction with the heading
difference wrapped to ``(-pi, pi]``; it is *not* the SE(2) log map.

Batched helpers operating on ``(..., 3)`` arrays live next to the scalar
:class:`Pose2` API so that the factor graph can evaluate thousands of
residuals without Python loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to ``(-pi, pi]``."""
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    r = np.remainder(np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi
    # remainder maps onto [-pi, pi); move the lower endpoint to +pi
    return np.where(r <= -math.pi, r + TWO_PI, r)


@dataclass(frozen=True, slots=True)
class Pose2:
    """Planar rigid transform.

    Attributes
    ----------
    x, y:
        Translation in meters.
    yaw:
        Heading in radians, normalised to ``(-pi, pi]`` on construction.
    """

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw], dtype=float)

    def compose(self, other: "Pose2") -> "Pose2":
        return compose(self, other)

    def inverse(self) -> "Pose2":
        return inverse(self)

    def __matmul__(self, other: "Pose2") -> "Pose2":
        return compose(self, other)


@dataclass(frozen=True, slots=True)
class Velocity2:
    """Unicycle velocity: forward speed ``v`` (m/s) and turn rate ``omega`` (rad/s)."""

    v: float = 0.0
    omega: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "omega", float(self.omega))
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise ValueError(f"non-finite velocity ({self.v}, {self.omega})")

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Velocity2":
        return cls(float(a[0]), float(a[1]))


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Return ``a * b``: ``b`` expressed in the frame of ``a`` mapped out of it."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.yaw + b.yaw)


def inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    return Pose2(-c * p.x - s * p.y, s * p.x - c * p.y, -p.yaw)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative transform ``inverse(a) * b``."""
    return compose(inverse(a), b)


def pose_error(a: Pose2, b: Pose2) -> np.ndarray:
    """Componentwise ``a - b`` with the yaw difference wrapped."""
    return np.array([a.x - b.x, a.y - b.y, wrap_angle(a.yaw - b.yaw)])


# -- batched (..., 3) versions -------------------------------------------------


def compose_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    out[..., 1] = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    out[..., 2] = wrap_angles(a[..., 2] + b[..., 2])
    return out


def inverse_arrays(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    c, s = np.cos(p[..., 2]), np.sin(p[..., 2])
    out = np.empty_like(p)
    out[..., 0] = -c * p[..., 0] - s * p[..., 1]
    out[..., 1] = s * p[..., 0] - c * p[..., 1]
    out[..., 2] = wrap_angles(-p[..., 2])
    return out


def pose_error_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d[..., 2] = wrap_angles(d[..., 2])
    return d


def compose_jacobian_left(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``d compose(a, b) / d a`` for additive perturbations of ``a``; shape ``(..., 3, 3)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast_shapes(a.shape, b.shape)[:-1]
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    J = np.zeros(shape + (3, 3))
    J[..., 0, 0] = 1.0
    J[..., 1, 1] = 1.0
    J[..., 2, 2] = 1.0
    J[..., 0, 2] = -s * b[..., 0] - c * b[..., 1]
    J[..., 1, 2] = c * b[..., 0] - s * b[..., 1]
    return J


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian noise stored as an upper-triangular square-root information matrix.

    ``whiten(r) = R @ r`` so that ``0.5 * |whiten(r)|^2`` is the negative
    log-likelihood up to a constant.
    """

    sqrt_info: np.ndarray

    def __post_init__(self) -> None:
        R = np.array(self.sqrt_info, dtype=float, copy=True)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError(f"sqrt_info must be square, got shape {R.shape}")
        if not np.allclose(R, np.triu(R)):
            raise ValueError("sqrt_info must be upper triangular")
        if np.any(np.abs(np.diag(R)) <= 0.0) or not np.all(np.isfinite(R)):
            raise ValueError("sqrt_info must be finite and invertible")
        R.setflags(write=False)
        object.__setattr__(self, "sqrt_info", R)

    @classmethod
    def from_sigmas(cls, sigmas: Sequence[float]) -> "NoiseModel":
        sig = np.asarray(sigmas, dtype=float)
        if np.any(sig <= 0.0):
            raise ValueError(f"standard deviations must be positive, got {sig}")
        return cls(np.diag(1.0 / sig))

    @classmethod
    def from_covariance(cls, cov: np.ndarray) -> "NoiseModel":
        # information = R^T R with R upper triangular
        info = np.linalg.inv(np.asarray(cov, dtype=float))
        return cls(np.linalg.cholesky(info).T)

    @property
    def dim(self) -> int:
        return self.sqrt_info.shape[0]

    def whiten(self, r: np.ndarray) -> np.ndarray:
        return self.sqrt_info @ np.asarray(r, dtype=float)

    def unwhiten(self, w: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.sqrt_info, np.asarray(w, dtype=float))

    def log_det(self) -> float:
        """``ln det(sqrt_info)``, i.e. ``-0.5 ln det(covariance)``."""
        return float(np.sum(np.log(np.abs(np.diag(self.sqrt_info)))))

    @property
    def covariance(self) -> np.ndarray:
        Rinv = np.linalg.inv(self.sqrt_info)
        return Rinv @ Rinv.T
