"""Deterministic scenario generator.

Produces ground-truth ego and object trajectories plus the two streams a
LiDAR front-end would deliver: per-frame relative odometry and
confidence-scored detections. Occlusions are scripted dropouts; clutter is
uniform over the sensor disc.

Random numbers come from ``numpy.random.Philox`` (Philox-4x64-10, a 64-bit
counter-based generator with fixed published round constants), so a seed
yields the same data on every platform. Draw order per frame is fixed:
odometry noise (3 normals), then for every object in index order its
detection noise (3 normals) and score noise (1 normal) whether or not it is
detected, then the clutter count and clutter boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import ConfigError, Detection
from .ctrv import ctrv_predict
from .geometry import Pose2, Velocity2, between, compose, inverse

CLUTTER_SIZE = (4.0, 1.8)


@dataclass(frozen=True)
class VelocitySegment:
    start_frame: int
    vel: Velocity2


@dataclass(frozen=True)
class ObjectScript:
    """One scripted object. Alive on frames ``spawn_frame <= k < despawn_frame``."""

    spawn_frame: int
    despawn_frame: int
    initial_pose: Pose2
    script: tuple[VelocitySegment, ...]
    length: float = 4.2
    width: float = 1.8


@dataclass(frozen=True)
class Occlusion:
    """Object ``object_index`` is not detected on frames ``start_frame..end_frame`` inclusive."""

    object_index: int
    start_frame: int
    end_frame: int


@dataclass(frozen=True)
class ScoreModel:
    base: float = 0.95
    distance_falloff: float = 0.005
    noise: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    duration: int
    dt: float
    ego_script: tuple[VelocitySegment, ...]
    objects: tuple[ObjectScript, ...] = ()
    occlusions: tuple[Occlusion, ...] = ()
    det_noise: tuple[float, float, float] = (0.05, 0.05, 0.01)
    odom_noise: tuple[float, float, float] = (0.01, 0.01, 0.002)
    score_model: ScoreModel = field(default_factory=ScoreModel)
    clutter_rate: float = 0.0
    fov_range: float = 60.0
    seed: int = 0
    clutter_score_range: tuple[float, float] = (0.2, 0.6)
    ego_initial: Pose2 = field(default_factory=Pose2)

    def __post_init__(self) -> None:
        validate(self)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed))

    def noiseless(self) -> "ScenarioConfig":
        """Same trajectories with zero noise, no clutter and no occlusions."""
        return replace(
            self,
            det_noise=(0.0, 0.0, 0.0),
            odom_noise=(0.0, 0.0, 0.0),
            score_model=replace(self.score_model, noise=0.0),
            clutter_rate=0.0,
            occlusions=(),
        )


def _check_script(script: Sequence[VelocitySegment], where: str, first: int, duration: int) -> None:
    if not script:
        raise ConfigError(f"{where}: empty velocity script")
    if script[0].start_frame != first:
        raise ConfigError(
            f"{where}: script must start at frame {first}, starts at frame {script[0].start_frame}"
        )
    for a, b in zip(script, script[1:]):
        if b.start_frame <= a.start_frame:
            raise ConfigError(f"{where}: segment at frame {b.start_frame} not after frame {a.start_frame}")
    if script[-1].start_frame >= duration:
        raise ConfigError(f"{where}: segment at frame {script[-1].start_frame} beyond duration {duration}")


def validate(cfg: ScenarioConfig) -> None:
    if cfg.duration < 1:
        raise ConfigError(f"duration must be >= 1 frame, got {cfg.duration}")
    if not cfg.dt > 0.0:
        raise ConfigError(f"dt must be positive, got {cfg.dt}")
    _check_script(cfg.ego_script, "ego_script", 0, cfg.duration)
    for i, o in enumerate(cfg.objects):
        if not 0 <= o.spawn_frame < o.despawn_frame:
            raise ConfigError(f"objects[{i}]: spawn frame {o.spawn_frame} / despawn frame {o.despawn_frame}")
        _check_script(o.script, f"objects[{i}]", o.spawn_frame, max(cfg.duration, o.despawn_frame))
        if o.length <= 0 or o.width <= 0:
            raise ConfigError(f"objects[{i}]: box size must be positive")
    for i, occ in enumerate(cfg.occlusions):
        if not 0 <= occ.object_index < len(cfg.objects):
            raise ConfigError(f"occlusions[{i}]: no object {occ.object_index}")
        if occ.end_frame < occ.start_frame:
            raise ConfigError(f"occlusions[{i}]: end frame {occ.end_frame} before start frame {occ.start_frame}")
    for name in ("det_noise", "odom_noise"):
        v = getattr(cfg, name)
        if len(v) != 3 or min(v) < 0:
            raise ConfigError(f"{name} needs three non-negative std-devs, got {v}")
    if not 0.0 <= cfg.score_model.base <= 1.0:
        raise ConfigError(f"score_model.base must lie in [0, 1], got {cfg.score_model.base}")
    if cfg.score_model.noise < 0 or cfg.clutter_rate < 0 or cfg.fov_range <= 0:
        raise ConfigError("score noise and clutter rate must be >= 0, fov_range > 0")
    lo, hi = cfg.clutter_score_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise ConfigError(f"clutter_score_range must satisfy 0 <= lo <= hi <= 1, got {cfg.clutter_score_range}")


@dataclass
class ScenarioData:
    config: ScenarioConfig
    stamps: list[float]
    gt_ego: list[Pose2]
    gt_objects: list[dict[int, tuple[Pose2, Velocity2]]]
    sizes: dict[int, tuple[float, float]]
    odometry: list[Pose2]
    detections: list[list[Detection]]
    clutter_counts: list[int]

    @property
    def n_frames(self) -> int:
        return len(self.stamps)


def _velocity_at(script: Sequence[VelocitySegment], frame: int) -> Velocity2:
    vel = script[0].vel
    for seg in script:
        if seg.start_frame <= frame:
            vel = seg.vel
        else:
            break
    return vel


def generate(cfg: ScenarioConfig) -> ScenarioData:
    """Integrate the scripts with the CTRV model and sample the sensor streams."""
    validate(cfg)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    n = cfg.duration
    stamps = [k * cfg.dt for k in range(n)]

    ego = [cfg.ego_initial]
    for k in range(1, n):
        ego.append(ctrv_predict(ego[-1], _velocity_at(cfg.ego_script, k - 1), cfg.dt))

    gt_objects: list[dict[int, tuple[Pose2, Velocity2]]] = [dict() for _ in range(n)]
    for i, o in enumerate(cfg.objects):
        pose = o.initial_pose
        for k in range(o.spawn_frame, min(o.despawn_frame, n)):
            vel = _velocity_at(o.script, k)
            gt_objects[k][i] = (pose, vel)
            pose = ctrv_predict(pose, vel, cfg.dt)
    sizes = {i: (o.length, o.width) for i, o in enumerate(cfg.objects)}

    occluded = set()
    for occ in cfg.occlusions:
        for k in range(occ.start_frame, occ.end_frame + 1):
            occluded.add((occ.object_index, k))

    sm = cfg.score_model
    odom_sd = np.asarray(cfg.odom_noise)
    det_sd = np.asarray(cfg.det_noise)
    lo, hi = cfg.clutter_score_range
    odometry: list[Pose2] = []
    detections: list[list[Detection]] = []
    clutter_counts: list[int] = []
    for k in range(n):
        e_odo = rng.standard_normal(3) * odom_sd
        if k == 0:
            odometry.append(Pose2())
        else:
            rel = between(ego[k - 1], ego[k])
            odometry.append(Pose2(rel.x + e_odo[0], rel.y + e_odo[1], rel.yaw + e_odo[2]))

        inv_ego = inverse(ego[k])
        frame_dets: list[Detection] = []
        for i, o in enumerate(cfg.objects):
            e_det = rng.standard_normal(3) * det_sd
            e_score = rng.standard_normal() * sm.noise
            if i not in gt_objects[k] or (i, k) in occluded:
                continue
            rel = compose(inv_ego, gt_objects[k][i][0])
            rng_m = math.hypot(rel.x, rel.y)
            if rng_m > cfg.fov_range:
                continue
            score = min(max(sm.base - sm.distance_falloff * rng_m + e_score, 0.0), 1.0)
            frame_dets.append(
                Detection(
                    pose_ego=Pose2(rel.x + e_det[0], rel.y + e_det[1], rel.yaw + e_det[2]),
                    length=o.length,
                    width=o.width,
                    score=score,
                    frame=k,
                    stamp=stamps[k],
                )
            )
        n_clutter = int(rng.poisson(cfg.clutter_rate)) if cfg.clutter_rate > 0 else 0
        for _ in range(n_clutter):
            u, phi, yaw, s = rng.random(4)
            r = cfg.fov_range * math.sqrt(u)
            frame_dets.append(
                Detection(
                    pose_ego=Pose2(r * math.cos(2 * math.pi * phi), r * math.sin(2 * math.pi * phi),
                                   math.pi * (2 * yaw - 1)),
                    length=CLUTTER_SIZE[0],
                    width=CLUTTER_SIZE[1],
                    score=lo + (hi - lo) * s,
                    frame=k,
                    stamp=stamps[k],
                )
            )
        clutter_counts.append(n_clutter)
        detections.append(frame_dets)

    return ScenarioData(
        config=cfg,
        stamps=stamps,
        gt_ego=ego,
        gt_objects=gt_objects,
        sizes=sizes,
        odometry=odometry,
        detections=detections,
        clutter_counts=clutter_counts,
    )


# -- reference scenarios ---------------------------------------------------------


def _seg(frame: int, v: float, w: float = 0.0) -> VelocitySegment:
    return VelocitySegment(frame, Velocity2(v, w))


def reference_scenarios(seed: int = 0) -> dict[str, ScenarioConfig]:
    """Named scenarios exercising occlusion, fading range, crossing and density."""
    dt = 0.1
    occlusion8 = ScenarioConfig(
        name="OCCLUSION-8",
        duration=60,
        dt=dt,
        ego_script=(_seg(0, 5.0),),
        objects=(
            ObjectScript(0, 60, Pose2(15.0, 4.0, 0.0), (_seg(0, 8.0), _seg(30, 8.0, 0.23))),
        ),
        occlusions=(Occlusion(0, 30, 37),),
        det_noise=(0.005, 0.005, 0.00125),
        odom_noise=(0.002, 0.002, 0.0004),
        score_model=ScoreModel(base=1.0, distance_falloff=0.0, noise=0.002),
        clutter_rate=0.0,
        fov_range=80.0,
        seed=seed,
    )
    far_fade = ScenarioConfig(
        name="FAR-FADE",
        duration=80,
        dt=dt,
        ego_script=(_seg(0, 6.0),),
        objects=(
            ObjectScript(0, 80, Pose2(20.0, -3.5, 0.0), (_seg(0, 10.0),)),
            ObjectScript(0, 80, Pose2(10.0, 3.5, 0.0), (_seg(0, 6.5),)),
        ),
        occlusions=(Occlusion(0, 35, 37), Occlusion(0, 50, 51), Occlusion(0, 62, 65)),
        det_noise=(0.05, 0.05, 0.01),
        odom_noise=(0.01, 0.01, 0.002),
        score_model=ScoreModel(base=0.95, distance_falloff=0.012, noise=0.03),
        clutter_rate=0.2,
        fov_range=45.0,
        seed=seed,
    )
    crossing = ScenarioConfig(
        name="CROSSING",
        duration=60,
        dt=dt,
        ego_script=(_seg(0, 0.0),),
        objects=(
            ObjectScript(0, 60, Pose2(20.0, -12.0, math.pi / 2), (_seg(0, 8.0),)),
            ObjectScript(0, 60, Pose2(8.0, 0.0, 0.0), (_seg(0, 8.0),)),
        ),
        det_noise=(0.05, 0.05, 0.01),
        odom_noise=(0.0, 0.0, 0.0),
        score_model=ScoreModel(base=0.95, distance_falloff=0.002, noise=0.02),
        clutter_rate=0.0,
        fov_range=60.0,
        seed=seed,
    )
    dense6 = ScenarioConfig(
        name="DENSE-6",
        duration=100,
        dt=dt,
        ego_script=(_seg(0, 8.0), _seg(40, 8.0, 0.15), _seg(70, 8.0)),
        objects=(
            ObjectScript(0, 100, Pose2(15.0, 3.5, 0.0), (_seg(0, 8.0), _seg(40, 8.0, 0.15), _seg(70, 8.0))),
            ObjectScript(0, 100, Pose2(-10.0, -3.5, 0.0), (_seg(0, 8.5), _seg(40, 8.5, 0.15), _seg(70, 8.5))),
            ObjectScript(0, 100, Pose2(30.0, 0.0, 0.0), (_seg(0, 7.0), _seg(42, 7.0, 0.16), _seg(72, 7.0))),
            ObjectScript(0, 100, Pose2(25.0, 12.0, 0.0), (_seg(0, 0.0),)),
            ObjectScript(0, 100, Pose2(45.0, -8.0, 0.0), (_seg(0, 0.0),)),
            ObjectScript(0, 100, Pose2(60.0, 25.0, math.pi), (_seg(0, 0.0),)),
        ),
        det_noise=(0.05, 0.05, 0.01),
        odom_noise=(0.02, 0.02, 0.004),
        score_model=ScoreModel(base=0.95, distance_falloff=0.004, noise=0.02),
        clutter_rate=1.0,
        fov_range=60.0,
        seed=seed,
    )
    return {c.name: c for c in (occlusion8, far_fade, crossing, dense6)}
