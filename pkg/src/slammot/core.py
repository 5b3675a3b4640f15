"""Tracking records and configuration shared by every stage of the pipeline."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

from .geometry import Pose2, Velocity2


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


@dataclass(frozen=True)
class Detection:
    """Confidence-scored oriented box measured in the ego frame.

    ``z`` is carried untouched from input files; nothing downstream reads it.
    """

    pose_ego: Pose2
    length: float
    width: float
    score: float
    frame: int
    stamp: float
    z: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")
        if not (self.length > 0.0 and self.width > 0.0):
            raise ValueError(f"box size must be positive, got {self.length} x {self.width}")


class TrackStatus(str, enum.Enum):
    TENTATIVE = "Tentative"
    CONFIRMED = "Confirmed"
    RETIRED = "Retired"


@dataclass(frozen=True)
class TrackState:
    """Snapshot of one tracked object.

    ``conf_pred`` and ``conf_prev`` are the current and previous-frame
    prediction confidence; see :mod:`slammot.confidence`.
    """

    id: int
    pose_map: Pose2
    vel: Velocity2
    conf_pred: float
    miss_count: int = 0
    last_matched_frame: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    conf_prev: float | None = None
    length: float = 4.0
    width: float = 1.8

    def __post_init__(self) -> None:
        if not 0.0 < self.conf_pred <= 1.0:
            raise ValueError(f"track {self.id}: conf_pred {self.conf_pred} outside (0, 1]")
        if self.miss_count < 0:
            raise ValueError(f"track {self.id}: negative miss_count")
        if self.conf_prev is None:
            object.__setattr__(self, "conf_prev", self.conf_pred)


@dataclass(frozen=True)
class TrackerConfig:
    """Association, lifecycle and noise parameters.

    Association defaults are alpha 0.03, beta 80, sigma 6.5 and a 12-frame
    miss budget. Noise defaults are plausible automotive magnitudes.
    """

    alpha: float = 0.03
    beta: float = 80.0
    sigma_gate: float = 6.5
    gamma_diag: tuple[float, float, float] = (0.3, 0.3, 0.1)
    n_miss: int = 12
    spawn_score: float = 0.5
    discard_score: float = 0.3
    keyframe_stride: int = 5
    eps_conf: float = 1e-3
    eps_det: float = 0.0125
    eps_omega: float = 1e-4
    max_turn_rate: float = 2.0
    confirm_hits: int = 2
    tentative_gate_m: float = 3.0
    odom_sigmas: tuple[float, float, float] = (0.05, 0.05, 0.01)
    motion_sigmas: tuple[float, float, float] = (0.2, 0.2, 0.05)
    velocity_sigmas: tuple[float, float] = (0.5, 0.2)
    prior_sigmas: tuple[float, float, float] = (1e-3, 1e-3, 1e-4)
    fixed_lag_frames: int = 0
    max_iterations: int = 100

    def __post_init__(self) -> None:
        for name in ("gamma_diag", "odom_sigmas", "motion_sigmas", "velocity_sigmas", "prior_sigmas"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.beta > 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not self.sigma_gate > 0.0:
            raise ConfigError(f"sigma_gate must be positive, got {self.sigma_gate}")
        if len(self.gamma_diag) != 3 or min(self.gamma_diag) <= 0.0:
            raise ConfigError(f"gamma_diag needs three positive entries, got {self.gamma_diag}")
        if not 0.0 <= self.discard_score <= self.spawn_score <= 1.0:
            raise ConfigError(
                f"need 0 <= discard_score <= spawn_score <= 1, got "
                f"{self.discard_score}, {self.spawn_score}"
            )
        if self.n_miss < 0:
            raise ConfigError("n_miss must be >= 0")
        if self.keyframe_stride < 1:
            raise ConfigError("keyframe_stride must be >= 1")
        if self.confirm_hits < 1:
            raise ConfigError("confirm_hits must be >= 1")
        if not (0.0 < self.eps_conf < 1.0 and 0.0 < self.eps_det <= 1.0):
            raise ConfigError("eps_conf and eps_det must lie in (0, 1)")
        for name in ("odom_sigmas", "motion_sigmas", "velocity_sigmas", "prior_sigmas"):
            if min(getattr(self, name)) <= 0.0:
                raise ConfigError(f"{name} entries must be positive")
        if not math.isfinite(self.max_turn_rate) or self.max_turn_rate <= 0.0:
            raise ConfigError("max_turn_rate must be positive")

    def replace(self, **changes) -> "TrackerConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        unknown = set(changes) - set(values)
        if unknown:
            raise ConfigError(f"unknown tracker config field(s): {sorted(unknown)}")
        values.update(changes)
        return TrackerConfig(**values)
