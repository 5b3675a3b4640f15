"""Prediction confidence bookkeeping and the confidence-weighted gate.

A track's prediction confidence decays while it coasts without a detection
and is restored by matched detections. The gate multiplies the squared
Mahalanobis distance by that confidence, so a track that has been missing
for a while accepts detections further from its prediction.

Miss chain: a missed frame maps ``(current, previous)`` to ``(c, c)`` with
``c = current - alpha * previous``. Starting from ``(1, 1)`` at alpha 0.03
this yields 0.97, 0.9409, 0.912673, ...
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import NoiseModel

EPS_CONF = 1e-3
EPS_DET = 0.0125


@dataclass(frozen=True)
class ConfState:
    current: float
    previous: float

    def __post_init__(self) -> None:
        for name in ("current", "previous"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"confidence {name}={value} outside (0, 1]")


def decay_confidence(conf: ConfState, alpha: float, eps_conf: float = EPS_CONF) -> float:
    """Confidence after one missed frame, floored at ``eps_conf``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return max(conf.current - alpha * conf.previous, eps_conf)


def after_miss(conf: ConfState, alpha: float, eps_conf: float = EPS_CONF) -> ConfState:
    c = decay_confidence(conf, alpha, eps_conf)
    return ConfState(c, c)


def update_confidence(
    conf: ConfState, det_score: float, alpha: float, eps_conf: float = EPS_CONF
) -> float:
    """Confidence after a successful association with a detection scored ``det_score``.

    A track whose confidence had decayed all the way to the floor restarts at 1.
    """
    if not 0.0 <= det_score <= 1.0:
        raise ValueError(f"detection score {det_score} outside [0, 1]")
    if conf.previous <= eps_conf:
        return 1.0
    return min(conf.current + alpha * det_score, 1.0)


def after_match(
    conf: ConfState, det_score: float, alpha: float, eps_conf: float = EPS_CONF
) -> ConfState:
    c = update_confidence(conf, det_score, alpha, eps_conf)
    return ConfState(c, c)


def detection_variance_scale(score: float, beta: float, eps_det: float = EPS_DET) -> float:
    return max(1.0 - score, eps_det) * beta


def detection_sigma(
    score: float, gamma_diag, beta: float, eps_det: float = EPS_DET
) -> NoiseModel:
    """Square-root information of a detection whose base std-devs are ``gamma_diag``.

    The covariance is ``diag(gamma_diag)**2`` scaled by ``max(1 - score, eps_det) * beta``.
    """
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"detection score {score} outside [0, 1]")
    scale = detection_variance_scale(score, beta, eps_det)
    gamma = np.asarray(gamma_diag, dtype=float)
    return NoiseModel(np.diag(1.0 / (gamma * np.sqrt(scale))))


def gate(conf_pred: float, min_sq_mahalanobis: float, sigma_gate: float) -> bool:
    return conf_pred * min_sq_mahalanobis < sigma_gate
