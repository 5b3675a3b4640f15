"""On-disk formats.

Streams are newline-delimited JSON, one frame per line. A file written by
this package starts with a ``{"manifest": {...}}`` line; readers accept files
with or without it. Angles are radians, frames integers from 0, and every key
carries its unit.

* detections: ``{frame, stamp_s, boxes: [{x_m, y_m, yaw_rad, l_m, w_m, score}]}``
* odometry: ``{frame, stamp_s, dx_m, dy_m, dyaw_rad}`` (motion since the previous frame)
* ground truth: ``{frame, stamp_s, ego: {x_m, y_m, yaw_rad}, objects: [{track_id, x_m, y_m,
  yaw_rad, l_m, w_m, v_mps, omega_radps, in_range}]}``
* tracks: ``{frame, stamp_s, tracks: [{track_id, x_m, y_m, yaw_rad, l_m, w_m, v_mps,
  omega_radps, conf}]}``
* ego estimate: ``{frame, stamp_s, x_m, y_m, yaw_rad}``

Config files are JSON objects with flat keys; the scenario config nests only
the object, script and occlusion lists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .core import ConfigError, Detection, TrackerConfig
from .geometry import Pose2, Velocity2, compose, inverse
from .metrics import Box
from .simulator import (
    ObjectScript,
    Occlusion,
    ScenarioConfig,
    ScenarioData,
    ScoreModel,
    VelocitySegment,
    reference_scenarios,
)
from .tracker import FrameInput, TrackingResult


class DataError(ValueError):
    """Malformed or inconsistent data file."""


# -- ndjson plumbing --------------------------------------------------------------


def dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_ndjson(path: Path | str, records: Iterable[dict], manifest: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if manifest is not None:
            fh.write(dumps({"manifest": manifest}) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_ndjson(path: Path | str) -> tuple[dict | None, list[tuple[int, dict]]]:
    """Return ``(manifest, [(line_number, record), ...])``."""
    manifest = None
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected an object")
            if "manifest" in rec and len(rec) == 1:
                if out or manifest is not None:
                    raise DataError(f"{path}:{lineno}: manifest must be the first line")
                manifest = rec["manifest"]
                continue
            out.append((lineno, rec))
    return manifest, out


def _field(rec: dict, key: str, where: str, kind=float):
    if key not in rec:
        raise DataError(f"{where}: missing field '{key}'")
    val = rec[key]
    try:
        if kind is int:
            if isinstance(val, bool) or not float(val).is_integer():
                raise TypeError
            return int(val)
        if kind is float:
            out = float(val)
            if not math.isfinite(out):
                raise TypeError
            return out
        if kind is list:
            if not isinstance(val, list):
                raise TypeError
            return val
        if kind is dict:
            if not isinstance(val, dict):
                raise TypeError
            return val
        return kind(val)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: field '{key}' has invalid value {val!r}") from exc


def _check_frames(path, records: list[tuple[int, dict]]) -> None:
    for i, (lineno, rec) in enumerate(records):
        frame = _field(rec, "frame", f"{path}:{lineno}", int)
        if frame != i:
            raise DataError(f"{path}:{lineno}: expected frame {i}, found {frame}")


def _pose_dict(p: Pose2) -> dict:
    return {"x_m": p.x, "y_m": p.y, "yaw_rad": p.yaw}


def _pose_from(rec: dict, where: str) -> Pose2:
    return Pose2(_field(rec, "x_m", where), _field(rec, "y_m", where), _field(rec, "yaw_rad", where))


# -- detections / odometry -----------------------------------------------------------


def detection_records(detections: Sequence[Sequence[Detection]], stamps: Sequence[float]) -> list[dict]:
    out = []
    for k, (dets, stamp) in enumerate(zip(detections, stamps)):
        boxes = [
            {**_pose_dict(d.pose_ego), "l_m": d.length, "w_m": d.width, "score": d.score}
            for d in dets
        ]
        out.append({"frame": k, "stamp_s": stamp, "boxes": boxes})
    return out


def odometry_records(odometry: Sequence[Pose2], stamps: Sequence[float]) -> list[dict]:
    return [
        {"frame": k, "stamp_s": s, "dx_m": o.x, "dy_m": o.y, "dyaw_rad": o.yaw}
        for k, (o, s) in enumerate(zip(odometry, stamps))
    ]


def read_detections(path) -> tuple[list[float], list[list[Detection]]]:
    _, recs = read_ndjson(path)
    _check_frames(path, recs)
    stamps, frames = [], []
    for lineno, rec in recs:
        where = f"{path}:{lineno}"
        k = _field(rec, "frame", where, int)
        stamp = _field(rec, "stamp_s", where)
        dets = []
        for b in _field(rec, "boxes", where, list):
            if not isinstance(b, dict):
                raise DataError(f"{where}: box entries must be objects")
            try:
                dets.append(
                    Detection(
                        pose_ego=_pose_from(b, where),
                        length=_field(b, "l_m", where),
                        width=_field(b, "w_m", where),
                        score=_field(b, "score", where),
                        frame=k,
                        stamp=stamp,
                    )
                )
            except ValueError as exc:
                if isinstance(exc, DataError):
                    raise
                raise DataError(f"{where}: {exc}") from exc
        stamps.append(stamp)
        frames.append(dets)
    return stamps, frames


def read_odometry(path) -> tuple[list[float], list[Pose2]]:
    _, recs = read_ndjson(path)
    _check_frames(path, recs)
    stamps, odo = [], []
    for lineno, rec in recs:
        where = f"{path}:{lineno}"
        stamps.append(_field(rec, "stamp_s", where))
        odo.append(Pose2(_field(rec, "dx_m", where), _field(rec, "dy_m", where), _field(rec, "dyaw_rad", where)))
    return stamps, odo


def frame_inputs(det_path, odo_path) -> list[FrameInput]:
    """Join detection and odometry streams, checking that they describe the same frames."""
    o_stamps, odo = read_odometry(odo_path)
    if det_path is None:
        d_stamps, dets = o_stamps, [[] for _ in odo]
    else:
        d_stamps, dets = read_detections(det_path)
        if not dets:
            dets = [[] for _ in odo]
            d_stamps = o_stamps
    if len(d_stamps) != len(o_stamps):
        raise DataError(
            f"frame misalignment: {det_path} has {len(d_stamps)} frames, {odo_path} has {len(o_stamps)}"
        )
    for k, (a, b) in enumerate(zip(d_stamps, o_stamps)):
        if abs(a - b) > 1e-9:
            raise DataError(f"frame misalignment at frame {k}: stamp {a} vs {b}")
    for k in range(1, len(o_stamps)):
        if o_stamps[k] <= o_stamps[k - 1]:
            raise DataError(f"{odo_path}: stamps must increase (frame {k})")
    return [FrameInput(k, o_stamps[k], odo[k], tuple(dets[k])) for k in range(len(odo))]


# -- ground truth ------------------------------------------------------------------


def ground_truth_records(data: ScenarioData) -> list[dict]:
    out = []
    for k, objs in enumerate(data.gt_objects):
        inv = inverse(data.gt_ego[k])
        rows = []
        for i, (pose, vel) in sorted(objs.items()):
            rel = compose(inv, pose)
            length, width = data.sizes[i]
            rows.append(
                {
                    "track_id": i,
                    **_pose_dict(pose),
                    "l_m": length,
                    "w_m": width,
                    "v_mps": vel.v,
                    "omega_radps": vel.omega,
                    "in_range": math.hypot(rel.x, rel.y) <= data.config.fov_range,
                }
            )
        out.append({"frame": k, "stamp_s": data.stamps[k], "ego": _pose_dict(data.gt_ego[k]), "objects": rows})
    return out


@dataclass
class GroundTruth:
    stamps: list[float]
    ego: list[Pose2]
    boxes: list[list[Box]]
    velocities: list[dict[int, Velocity2]]


def read_ground_truth(path, in_range_only: bool = True) -> GroundTruth:
    _, recs = read_ndjson(path)
    _check_frames(path, recs)
    gt = GroundTruth([], [], [], [])
    for lineno, rec in recs:
        where = f"{path}:{lineno}"
        gt.stamps.append(_field(rec, "stamp_s", where))
        gt.ego.append(_pose_from(_field(rec, "ego", where, dict), where))
        boxes, vels = [], {}
        for o in _field(rec, "objects", where, list):
            if in_range_only and not o.get("in_range", True):
                continue
            tid = _field(o, "track_id", where, int)
            boxes.append(Box(tid, _pose_from(o, where), _field(o, "l_m", where), _field(o, "w_m", where)))
            vels[tid] = Velocity2(_field(o, "v_mps", where), _field(o, "omega_radps", where))
        gt.boxes.append(boxes)
        gt.velocities.append(vels)
    return gt


# -- tracker output ----------------------------------------------------------------


def ego_records(result: TrackingResult) -> list[dict]:
    return [
        {"frame": k, "stamp_s": s, **_pose_dict(p)}
        for k, s, p in zip(result.frames, result.stamps, result.ego)
    ]


def track_records(result: TrackingResult) -> list[dict]:
    out = []
    for k, s, frame in zip(result.frames, result.stamps, result.tracks):
        rows = [
            {
                "track_id": t.track_id,
                **_pose_dict(t.pose),
                "l_m": t.length,
                "w_m": t.width,
                "v_mps": t.vel.v,
                "omega_radps": t.vel.omega,
                "conf": t.conf_pred,
            }
            for t in frame
        ]
        out.append({"frame": k, "stamp_s": s, "tracks": rows})
    return out


@dataclass
class Estimate:
    stamps: list[float]
    ego: list[Pose2]
    boxes: list[list[Box]]


def read_estimate(path) -> Estimate:
    """Read a tracker output directory (``ego.ndjson`` + ``tracks.ndjson``) or a ground-truth file."""
    p = Path(path)
    if p.is_dir():
        _, ego_recs = read_ndjson(p / "ego.ndjson")
        _check_frames(p / "ego.ndjson", ego_recs)
        _, trk_recs = read_ndjson(p / "tracks.ndjson")
        _check_frames(p / "tracks.ndjson", trk_recs)
        if len(ego_recs) != len(trk_recs):
            raise DataError(f"{p}: ego and tracks files disagree on frame count")
        est = Estimate([], [], [])
        for (ln_e, e), (ln_t, t) in zip(ego_recs, trk_recs):
            est.stamps.append(_field(e, "stamp_s", f"{p / 'ego.ndjson'}:{ln_e}"))
            est.ego.append(_pose_from(e, f"{p / 'ego.ndjson'}:{ln_e}"))
            where = f"{p / 'tracks.ndjson'}:{ln_t}"
            est.boxes.append(
                [
                    Box(_field(r, "track_id", where, int), _pose_from(r, where),
                        _field(r, "l_m", where), _field(r, "w_m", where))
                    for r in _field(t, "tracks", where, list)
                ]
            )
        return est
    gt = read_ground_truth(p)
    return Estimate(gt.stamps, gt.ego, gt.boxes)


# -- configs -----------------------------------------------------------------------

# file key -> (TrackerConfig field, index into a tuple field or None)
TRACKER_KEYS: dict[str, tuple[str, int | None]] = {
    "alpha": ("alpha", None),
    "beta": ("beta", None),
    "sigma_gate": ("sigma_gate", None),
    "gamma_x_m": ("gamma_diag", 0),
    "gamma_y_m": ("gamma_diag", 1),
    "gamma_yaw_rad": ("gamma_diag", 2),
    "n_miss_frames": ("n_miss", None),
    "spawn_score": ("spawn_score", None),
    "discard_score": ("discard_score", None),
    "keyframe_stride_frames": ("keyframe_stride", None),
    "eps_conf": ("eps_conf", None),
    "eps_det": ("eps_det", None),
    "eps_omega_radps": ("eps_omega", None),
    "max_turn_rate_radps": ("max_turn_rate", None),
    "confirm_hits": ("confirm_hits", None),
    "tentative_gate_m": ("tentative_gate_m", None),
    "odom_sigma_x_m": ("odom_sigmas", 0),
    "odom_sigma_y_m": ("odom_sigmas", 1),
    "odom_sigma_yaw_rad": ("odom_sigmas", 2),
    "motion_sigma_x_m": ("motion_sigmas", 0),
    "motion_sigma_y_m": ("motion_sigmas", 1),
    "motion_sigma_yaw_rad": ("motion_sigmas", 2),
    "velocity_sigma_v_mps": ("velocity_sigmas", 0),
    "velocity_sigma_omega_radps": ("velocity_sigmas", 1),
    "prior_sigma_x_m": ("prior_sigmas", 0),
    "prior_sigma_y_m": ("prior_sigmas", 1),
    "prior_sigma_yaw_rad": ("prior_sigmas", 2),
    "fixed_lag_frames": ("fixed_lag_frames", None),
    "max_iterations": ("max_iterations", None),
}
_INT_FIELDS = {"n_miss", "keyframe_stride", "confirm_hits", "fixed_lag_frames", "max_iterations"}


def tracker_config_to_dict(cfg: TrackerConfig) -> dict:
    out = {}
    for key, (name, idx) in TRACKER_KEYS.items():
        val = getattr(cfg, name)
        out[key] = val if idx is None else val[idx]
    return out


def tracker_config_from_dict(d: dict, base: TrackerConfig | None = None, where: str = "tracker config") -> TrackerConfig:
    """Build a config from flat keys; absent keys keep the ``base`` (default) values."""
    base = base or TrackerConfig()
    values: dict[str, Any] = {}
    for key, raw in d.items():
        if key not in TRACKER_KEYS:
            raise ConfigError(f"{where}: unknown key '{key}'")
        name, idx = TRACKER_KEYS[key]
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{where}: key '{key}' must be a number, got {raw!r}")
        if name in _INT_FIELDS:
            if not float(raw).is_integer():
                raise ConfigError(f"{where}: key '{key}' must be an integer, got {raw!r}")
            raw = int(raw)
        if idx is None:
            values[name] = raw
        else:
            cur = list(values.get(name, getattr(base, name)))
            cur[idx] = float(raw)
            values[name] = tuple(cur)
    return base.replace(**values)


def load_json(path, kind: str = "config") -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read {kind} ({exc.strerror})") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: {kind} must be a JSON object")
    return obj


def load_tracker_config(path) -> TrackerConfig:
    return tracker_config_from_dict(load_json(path, "tracker config"), where=str(path))


def _cfg_field(d: dict, key: str, where: str, kind=float, default=None):
    if key not in d:
        if default is not None:
            return default
        raise ConfigError(f"{where}: missing field '{key}'")
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}: field '{key}' must be a number, got {val!r}")
    if kind is int:
        if not float(val).is_integer():
            raise ConfigError(f"{where}: field '{key}' must be an integer, got {val!r}")
        return int(val)
    return float(val)


def _cfg_list(d: dict, key: str, where: str, default=None) -> list:
    if key not in d:
        if default is not None:
            return default
        raise ConfigError(f"{where}: missing field '{key}'")
    if not isinstance(d[key], list):
        raise ConfigError(f"{where}: field '{key}' must be a list")
    return d[key]


def _script_to(script) -> list[dict]:
    return [{"start_frame": s.start_frame, "v_mps": s.vel.v, "omega_radps": s.vel.omega} for s in script]


def _script_from(items: list, where: str) -> tuple[VelocitySegment, ...]:
    out = []
    for i, s in enumerate(items):
        w = f"{where}[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(f"{w}: expected an object")
        out.append(
            VelocitySegment(
                _cfg_field(s, "start_frame", w, int),
                Velocity2(_cfg_field(s, "v_mps", w), _cfg_field(s, "omega_radps", w, default=0.0)),
            )
        )
    return tuple(out)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "duration_frames": cfg.duration,
        "dt_s": cfg.dt,
        "fov_range_m": cfg.fov_range,
        "clutter_rate_per_frame": cfg.clutter_rate,
        "clutter_score_min": cfg.clutter_score_range[0],
        "clutter_score_max": cfg.clutter_score_range[1],
        "det_noise_x_m": cfg.det_noise[0],
        "det_noise_y_m": cfg.det_noise[1],
        "det_noise_yaw_rad": cfg.det_noise[2],
        "odom_noise_x_m": cfg.odom_noise[0],
        "odom_noise_y_m": cfg.odom_noise[1],
        "odom_noise_yaw_rad": cfg.odom_noise[2],
        "score_base": cfg.score_model.base,
        "score_falloff_per_m": cfg.score_model.distance_falloff,
        "score_noise": cfg.score_model.noise,
        "ego_initial_x_m": cfg.ego_initial.x,
        "ego_initial_y_m": cfg.ego_initial.y,
        "ego_initial_yaw_rad": cfg.ego_initial.yaw,
        "ego_script": _script_to(cfg.ego_script),
        "objects": [
            {
                "spawn_frame": o.spawn_frame,
                "despawn_frame": o.despawn_frame,
                **_pose_dict(o.initial_pose),
                "l_m": o.length,
                "w_m": o.width,
                "script": _script_to(o.script),
            }
            for o in cfg.objects
        ],
        "occlusions": [
            {"object_index": c.object_index, "start_frame": c.start_frame, "end_frame": c.end_frame}
            for c in cfg.occlusions
        ],
    }


def scenario_from_dict(d: dict, where: str = "scenario config") -> ScenarioConfig:
    name = d.get("name", "custom")
    if not isinstance(name, str):
        raise ConfigError(f"{where}: field 'name' must be a string")
    f = lambda key, kind=float, default=None: _cfg_field(d, key, where, kind, default)  # noqa: E731
    objects = []
    for i, o in enumerate(_cfg_list(d, "objects", where)):
        w = f"{where}: objects[{i}]"
        if not isinstance(o, dict):
            raise ConfigError(f"{w}: expected an object")
        objects.append(
            ObjectScript(
                spawn_frame=_cfg_field(o, "spawn_frame", w, int),
                despawn_frame=_cfg_field(o, "despawn_frame", w, int),
                initial_pose=Pose2(_cfg_field(o, "x_m", w), _cfg_field(o, "y_m", w), _cfg_field(o, "yaw_rad", w)),
                script=_script_from(_cfg_list(o, "script", w), f"{w}.script"),
                length=_cfg_field(o, "l_m", w, default=4.2),
                width=_cfg_field(o, "w_m", w, default=1.8),
            )
        )
    occlusions = []
    for i, c in enumerate(_cfg_list(d, "occlusions", where, default=[])):
        w = f"{where}: occlusions[{i}]"
        if not isinstance(c, dict):
            raise ConfigError(f"{w}: expected an object")
        occlusions.append(
            Occlusion(_cfg_field(c, "object_index", w, int), _cfg_field(c, "start_frame", w, int),
                      _cfg_field(c, "end_frame", w, int))
        )
    known = set(scenario_to_dict(reference_scenarios()["CROSSING"]))
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key '{unknown[0]}'")
    return ScenarioConfig(
        name=name,
        duration=f("duration_frames", int),
        dt=f("dt_s"),
        ego_script=_script_from(_cfg_list(d, "ego_script", where), f"{where}: ego_script"),
        objects=tuple(objects),
        occlusions=tuple(occlusions),
        det_noise=(f("det_noise_x_m"), f("det_noise_y_m"), f("det_noise_yaw_rad")),
        odom_noise=(f("odom_noise_x_m"), f("odom_noise_y_m"), f("odom_noise_yaw_rad")),
        score_model=ScoreModel(f("score_base"), f("score_falloff_per_m"), f("score_noise")),
        clutter_rate=f("clutter_rate_per_frame", default=0.0),
        fov_range=f("fov_range_m"),
        seed=f("seed", int, default=0),
        clutter_score_range=(f("clutter_score_min", default=0.2), f("clutter_score_max", default=0.6)),
        ego_initial=Pose2(f("ego_initial_x_m", default=0.0), f("ego_initial_y_m", default=0.0),
                          f("ego_initial_yaw_rad", default=0.0)),
    )


def load_scenario(spec: str) -> ScenarioConfig:
    """A reference scenario name (e.g. ``OCCLUSION-8``) or a path to a scenario JSON file.

    The file may hold the scenario itself or the ``{"manifest", "scenario"}``
    wrapper written by ``slammot simulate``.
    """
    refs = reference_scenarios()
    if spec in refs:
        return refs[spec]
    if not Path(spec).exists():
        raise ConfigError(f"unknown scenario '{spec}' (not a file; reference names: {', '.join(refs)})")
    d = load_json(spec, "scenario config")
    if "scenario" in d and isinstance(d["scenario"], dict):
        d = d["scenario"]
    return scenario_from_dict(d, where=str(spec))


def write_json(path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n")
