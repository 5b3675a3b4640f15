"""Evaluation: CLEAR-MOT counts at an IoU threshold, ego trajectory error,
and per-track longitudinal/lateral/yaw RMSE.

Matching follows Bernardin and Stiefelhagen: a ground-truth object matched in
the previous frame keeps its partner if the pair still overlaps enough; the
rest is solved as an optimal assignment maximising total IoU. An ID switch is
counted when a ground-truth object is matched to an estimate ID different
from the one it was last matched to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from shapely.geometry import Polygon

from .geometry import Pose2, compose, inverse, wrap_angle


@dataclass(frozen=True)
class Box:
    track_id: int
    pose: Pose2
    length: float
    width: float


@dataclass
class TrackErrors:
    tracked_frame_length: int
    rmse_long: float
    rmse_lat: float
    rmse_yaw: float

    def as_dict(self) -> dict:
        return {
            "tracked_frame_length": self.tracked_frame_length,
            "rmse_long_m": self.rmse_long,
            "rmse_lat_m": self.rmse_lat,
            "rmse_yaw_rad": self.rmse_yaw,
        }


@dataclass
class MotReport:
    mota: float
    motp: float
    recall: float
    precision: float
    id_switches: int
    false_positives: int
    false_negatives: int
    gt_count: int
    match_count: int
    per_track: dict[int, TrackErrors] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "mota": self.mota,
            "motp": self.motp,
            "recall": self.recall,
            "precision": self.precision,
            "id_switches": self.id_switches,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "gt_count": self.gt_count,
            "match_count": self.match_count,
            "per_track": {str(k): v.as_dict() for k, v in sorted(self.per_track.items())},
        }


@dataclass
class EgoReport:
    mean_err: float
    rmse: float
    errors: list[float]

    def as_dict(self) -> dict:
        return {"mean_err_m": self.mean_err, "rmse_m": self.rmse, "errors_m": list(self.errors)}


def box_polygon(pose: Pose2, length: float, width: float) -> Polygon:
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    hl, hw = 0.5 * length, 0.5 * width
    corners = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
    return Polygon([(pose.x + c * u - s * v, pose.y + s * u + c * v) for u, v in corners])


def oriented_iou(a: Box | tuple, b: Box | tuple) -> float:
    """IoU of two oriented rectangles in the ground plane.

    Boxes are :class:`Box` or ``(pose, length, width)`` tuples.
    """
    pa, la, wa = _unpack(a)
    pb, lb, wb = _unpack(b)
    if min(la, wa, lb, wb) <= 0:
        raise ValueError("box sizes must be positive")
    A = box_polygon(pa, la, wa)
    B = box_polygon(pb, lb, wb)
    inter = A.intersection(B).area
    if inter <= 0.0:
        return 0.0
    return float(inter / (A.area + B.area - inter))


def _unpack(b) -> tuple[Pose2, float, float]:
    if isinstance(b, Box):
        return b.pose, b.length, b.width
    return b[0], float(b[1]), float(b[2])


def evaluate_mot(
    gt: Sequence[Sequence[Box]],
    est: Sequence[Sequence[Box]],
    iou_threshold: float = 0.5,
) -> MotReport:
    """CLEAR-MOT over frame-aligned lists of boxes (one list per frame)."""
    if len(gt) != len(est):
        raise ValueError(f"frame count mismatch: {len(gt)} ground-truth frames vs {len(est)} estimated")
    fn = fp = idsw = matches = gt_count = 0
    iou_sum = 0.0
    prev: dict[int, int] = {}
    last_id: dict[int, int] = {}
    errs: dict[int, list[tuple[float, float, float]]] = {}

    for gframe, eframe in zip(gt, est):
        gt_count += len(gframe)
        g_by = {b.track_id: b for b in gframe}
        e_by = {b.track_id: b for b in eframe}
        if len(g_by) != len(gframe) or len(e_by) != len(eframe):
            raise ValueError("duplicate track id inside one frame")
        cur: dict[int, int] = {}
        ious: dict[tuple[int, int], float] = {}
        for gid, eid in prev.items():
            if gid in g_by and eid in e_by:
                iou = oriented_iou(g_by[gid], e_by[eid])
                if iou >= iou_threshold:
                    cur[gid] = eid
                    ious[(gid, eid)] = iou
        g_rest = [b for b in gframe if b.track_id not in cur]
        used = set(cur.values())
        e_rest = [b for b in eframe if b.track_id not in used]
        if g_rest and e_rest:
            M = np.array([[oriented_iou(g, e) for e in e_rest] for g in g_rest])
            cost = np.where(M >= iou_threshold, -M, 1.0)
            rows, cols = linear_sum_assignment(cost)
            for r, c in zip(rows, cols):
                if M[r, c] >= iou_threshold:
                    gid, eid = g_rest[r].track_id, e_rest[c].track_id
                    cur[gid] = eid
                    ious[(gid, eid)] = float(M[r, c])
        for gid, eid in cur.items():
            if gid in last_id and last_id[gid] != eid:
                idsw += 1
            last_id[gid] = eid
            iou_sum += ious[(gid, eid)]
            errs.setdefault(gid, []).append(_object_errors(g_by[gid].pose, e_by[eid].pose))
        matches += len(cur)
        fn += len(gframe) - len(cur)
        fp += len(eframe) - len(cur)
        prev = cur

    per_track = {}
    for gid, rows in errs.items():
        a = np.asarray(rows)
        rms = np.sqrt(np.mean(a**2, axis=0))
        per_track[gid] = TrackErrors(len(rows), float(rms[0]), float(rms[1]), float(rms[2]))
    mota = 1.0 - (fn + fp + idsw) / gt_count if gt_count else 1.0
    return MotReport(
        mota=mota,
        motp=iou_sum / matches if matches else 0.0,
        recall=matches / gt_count if gt_count else 1.0,
        precision=matches / (matches + fp) if matches + fp else 1.0,
        id_switches=idsw,
        false_positives=fp,
        false_negatives=fn,
        gt_count=gt_count,
        match_count=matches,
        per_track=per_track,
    )


def _object_errors(gt: Pose2, est: Pose2) -> tuple[float, float, float]:
    """Position error split along / across the ground-truth heading, and yaw error."""
    dx, dy = est.x - gt.x, est.y - gt.y
    c, s = math.cos(gt.yaw), math.sin(gt.yaw)
    return c * dx + s * dy, -s * dx + c * dy, wrap_angle(est.yaw - gt.yaw)


def evaluate_ego(gt_ego: Sequence[Pose2], est_ego: Sequence[Pose2]) -> EgoReport:
    """Translational error after aligning the estimate's first pose onto the ground truth's.

    Only the first pose is used for alignment, so an error that is present
    from frame 0 onwards is removed, while drift accumulated later is not.
    """
    if len(gt_ego) != len(est_ego):
        raise ValueError(f"frame count mismatch: {len(gt_ego)} vs {len(est_ego)}")
    if not gt_ego:
        return EgoReport(0.0, 0.0, [])
    T = compose(gt_ego[0], inverse(est_ego[0]))
    errors = []
    for g, e in zip(gt_ego, est_ego):
        a = compose(T, e)
        errors.append(math.hypot(a.x - g.x, a.y - g.y))
    arr = np.asarray(errors)
    return EgoReport(float(arr.mean()), float(np.sqrt(np.mean(arr**2))), errors)


def gt_boxes(data, fov_only: bool = True) -> list[list[Box]]:
    """Ground-truth boxes per frame from a generated scenario.

    With ``fov_only`` an object counts only while inside the sensor range;
    occluded objects still count, since a tracker that bridges the gap is
    expected to report them.
    """
    out = []
    for k, objs in enumerate(data.gt_objects):
        inv = inverse(data.gt_ego[k])
        frame = []
        for i, (pose, _) in sorted(objs.items()):
            if fov_only:
                rel = compose(inv, pose)
                if math.hypot(rel.x, rel.y) > data.config.fov_range:
                    continue
            length, width = data.sizes[i]
            frame.append(Box(i, pose, length, width))
        out.append(frame)
    return out


def est_boxes(tracks: Sequence[Sequence]) -> list[list[Box]]:
    """Convert per-frame tracker outputs (anything with ``track_id``, ``pose``, ``length``, ``width``)."""
    return [[Box(t.track_id, t.pose, t.length, t.width) for t in frame] for frame in tracks]


def align_map_to_world(tracks_or_boxes: Sequence[Sequence[Box]], T: Pose2) -> list[list[Box]]:
    return [[Box(b.track_id, compose(T, b.pose), b.length, b.width) for b in f] for f in tracks_or_boxes]


__all__ = [
    "Box",
    "EgoReport",
    "MotReport",
    "TrackErrors",
    "align_map_to_world",
    "est_boxes",
    "evaluate_ego",
    "evaluate_mot",
    "gt_boxes",
    "oriented_iou",
]
