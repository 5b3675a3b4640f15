import pytest

from slammot.core import ConfigError, Detection, TrackerConfig, TrackState, TrackStatus
from slammot.geometry import Pose2, Velocity2


def test_defaults_match_published_setting():
    cfg = TrackerConfig()
    assert (cfg.alpha, cfg.beta, cfg.sigma_gate, cfg.n_miss) == (0.03, 80.0, 6.5, 12)


@pytest.mark.parametrize(
    "change",
    [
        {"alpha": -0.1},
        {"alpha": 1.5},
        {"beta": 0.0},
        {"sigma_gate": -1.0},
        {"gamma_diag": (0.3, 0.0, 0.1)},
        {"discard_score": 0.6, "spawn_score": 0.5},
        {"keyframe_stride": 0},
        {"n_miss": -1},
        {"odom_sigmas": (0.1, 0.1, 0.0)},
    ],
)
def test_config_validation(change):
    with pytest.raises(ConfigError):
        TrackerConfig().replace(**change)


def test_replace_keeps_other_fields():
    cfg = TrackerConfig().replace(alpha=0.0)
    assert cfg.alpha == 0.0 and cfg.beta == 80.0


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection(Pose2(), 4.0, 1.8, 1.2, 0, 0.0)
    with pytest.raises(ValueError):
        Detection(Pose2(), 0.0, 1.8, 0.5, 0, 0.0)


def test_track_state_defaults():
    t = TrackState(1, Pose2(), Velocity2(), conf_pred=0.8)
    assert t.conf_prev == 0.8 and t.status is TrackStatus.TENTATIVE
    with pytest.raises(ValueError):
        TrackState(1, Pose2(), Velocity2(), conf_pred=0.0)
