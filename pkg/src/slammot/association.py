"""Max-mixture data association and track lifecycle.

Every detection of a frame becomes one Gaussian component of a mixture.
A component's weight ``c_j = w_j * det(R_j)`` (``R_j`` the square-root
information) is larger for confident detections, and the negative
log-likelihood of a track under the max-mixture is

    min_j  -ln c_j + 0.5 * |R_j (pred - T * Z_j)|^2 .

For the least-squares backend the chosen component is written as a
4-vector ``[sqrt(-2 ln(c_j / c_max)), R_j e_j]`` whose squared norm is twice
that value shifted by the constant ``-2 ln c_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .confidence import ConfState, after_match, after_miss, detection_sigma, gate
from .core import Detection, TrackerConfig, TrackState, TrackStatus
from .geometry import Pose2, Velocity2, compose, pose_error


@dataclass(frozen=True)
class MixtureComponent:
    det_index: int
    weight: float
    sqrt_info: np.ndarray
    pose_map: Pose2

    @property
    def log_c(self) -> float:
        return math.log(self.weight) + float(np.sum(np.log(np.abs(np.diag(self.sqrt_info)))))

    @property
    def c(self) -> float:
        return math.exp(self.log_c)


class Match(NamedTuple):
    track_id: int
    det_index: int
    error_vector: np.ndarray


@dataclass
class AssociationResult:
    matched: list[Match] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)
    # track id -> detection indices that passed that track's gate
    candidates: dict[int, list[int]] = field(default_factory=dict)

    def match_for(self, track_id: int) -> Match | None:
        for m in self.matched:
            if m.track_id == track_id:
                return m
        return None


def build_components(
    dets: Sequence[Detection], ego_pose: Pose2, cfg: TrackerConfig
) -> list[MixtureComponent]:
    """One component per detection, placed in the map frame through ``ego_pose``.

    Weights are uniform, so ``c_j`` differs between detections only through
    the score-dependent covariance.
    """
    m = len(dets)
    comps = []
    for j, d in enumerate(dets):
        noise = detection_sigma(d.score, cfg.gamma_diag, cfg.beta, cfg.eps_det)
        comps.append(
            MixtureComponent(
                det_index=j,
                weight=1.0 / m,
                sqrt_info=noise.sqrt_info,
                pose_map=compose(ego_pose, d.pose_ego),
            )
        )
    return comps


def _whitened(pred: Pose2, comp: MixtureComponent) -> np.ndarray:
    return comp.sqrt_info @ pose_error(pred, comp.pose_map)


def component_negloglik(pred_pose_map: Pose2, comp: MixtureComponent) -> float:
    w = _whitened(pred_pose_map, comp)
    return -comp.log_c + 0.5 * float(w @ w)


def select_component(
    pred_pose_map: Pose2, comps: Sequence[MixtureComponent]
) -> tuple[int, np.ndarray]:
    """Index (into ``comps``) of the max-mixture winner and its 4-dim error vector.

    Raises ``ValueError`` on an empty component list; callers treat that as a
    frame without detections.
    """
    if not comps:
        raise ValueError("no mixture components: frame has no detections")
    nll = [component_negloglik(pred_pose_map, c) for c in comps]
    best = int(np.argmin(nll))
    return best, error_vector(pred_pose_map, comps, best)


def error_vector(pred_pose_map: Pose2, comps: Sequence[MixtureComponent], j: int) -> np.ndarray:
    log_cmax = max(c.log_c for c in comps)
    head = math.sqrt(max(-2.0 * (comps[j].log_c - log_cmax), 0.0))
    return np.concatenate(([head], _whitened(pred_pose_map, comps[j])))


def associate_frame(
    tracks: Sequence[TrackState],
    dets: Sequence[Detection],
    ego_pose: Pose2,
    cfg: TrackerConfig,
) -> AssociationResult:
    """Confidence-gated max-mixture association of predicted tracks to detections.

    ``tracks`` must already be predicted to the detection time. A pair is a
    candidate when ``conf_pred * d2 < sigma_gate`` with ``d2`` the squared
    whitened residual of that component. A track's candidates form the
    mixture of its perception factor, and error vectors are normalised by the
    best weight among them. Candidates are then projected to a one-to-one
    assignment greedily by ascending negative log-likelihood, so a track whose
    preferred detection is taken may still fall back on another candidate.
    """
    comps = build_components(dets, ego_pose, cfg)
    candidates = []
    errors: dict[tuple[int, int], np.ndarray] = {}
    gated: dict[int, list[int]] = {}
    for t in tracks:
        if not comps:
            break
        for j, comp in enumerate(comps):
            w = _whitened(t.pose_map, comp)
            d2 = float(w @ w)
            if gate(t.conf_pred, d2, cfg.sigma_gate):
                nll = -comp.log_c + 0.5 * d2
                candidates.append((nll, t.id, j))
                gated.setdefault(t.id, []).append(j)
    for t in tracks:
        sub = [comps[j] for j in gated.get(t.id, [])]
        for i, j in enumerate(gated.get(t.id, [])):
            errors[(t.id, j)] = error_vector(t.pose_map, sub, i)

    candidates.sort()
    taken_tracks: set[int] = set()
    taken_dets: set[int] = set()
    result = AssociationResult(candidates=gated)
    for _, tid, j in candidates:
        if tid in taken_tracks or j in taken_dets:
            continue
        taken_tracks.add(tid)
        taken_dets.add(j)
        result.matched.append(Match(tid, j, errors[(tid, j)]))
    result.matched.sort(key=lambda m: m.track_id)
    result.unmatched_tracks = [t.id for t in tracks if t.id not in taken_tracks]
    result.unmatched_detections = [j for j in range(len(dets)) if j not in taken_dets]
    return result


def associate_tentative(
    tracks: Sequence[TrackState],
    dets: Sequence[Detection],
    det_indices: Sequence[int],
    ego_pose: Pose2,
    gate_m: float,
) -> list[Match]:
    """Nearest-neighbour association for tracks seen only once.

    A single detection carries no velocity, so the confidence gate would
    reject any fast mover on its second frame; a plain distance gate is used
    until the track is confirmed.
    """
    pairs = []
    for t in tracks:
        for j in det_indices:
            p = compose(ego_pose, dets[j].pose_ego)
            dist = math.hypot(p.x - t.pose_map.x, p.y - t.pose_map.y)
            if dist <= gate_m:
                pairs.append((dist, t.id, j))
    pairs.sort()
    used_t: set[int] = set()
    used_d: set[int] = set()
    out = []
    for dist, tid, j in pairs:
        if tid in used_t or j in used_d:
            continue
        used_t.add(tid)
        used_d.add(j)
        out.append(Match(tid, j, np.array([0.0, dist, 0.0, 0.0])))
    return out


class TrackTable:
    """Owns track states and hands out identifiers; single writer."""

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self.tracks: dict[int, TrackState] = {}
        self.hits: dict[int, int] = {}
        self._next_id = 1

    def active(self, status: TrackStatus | None = None) -> list[TrackState]:
        out = [t for t in self.tracks.values() if t.status is not TrackStatus.RETIRED]
        if status is not None:
            out = [t for t in out if t.status is status]
        return sorted(out, key=lambda t: t.id)

    def set_state(self, track: TrackState) -> None:
        self.tracks[track.id] = track

    def spawn(self, det: Detection, ego_pose: Pose2, frame: int) -> TrackState:
        tid = self._next_id
        self._next_id += 1
        conf = max(det.score, self.cfg.eps_conf)
        status = TrackStatus.CONFIRMED if self.cfg.confirm_hits <= 1 else TrackStatus.TENTATIVE
        track = TrackState(
            id=tid,
            pose_map=compose(ego_pose, det.pose_ego),
            vel=Velocity2(0.0, 0.0),
            conf_pred=conf,
            conf_prev=conf,
            miss_count=0,
            last_matched_frame=frame,
            status=status,
            length=det.length,
            width=det.width,
        )
        self.tracks[tid] = track
        self.hits[tid] = 1
        return track

    def manage(
        self, result: AssociationResult, dets: Sequence[Detection], frame: int, ego_pose: Pose2
    ) -> tuple[list[TrackState], list[int]]:
        """Apply one frame's association outcome.

        Matched tracks restore confidence and reset their miss counter;
        unmatched confirmed tracks decay and retire after more than
        ``n_miss`` consecutive misses; an unmatched tentative track is simply
        dropped. Leftover detections scoring at least ``spawn_score`` start
        new tentative tracks.

        Returns ``(spawned, retired_ids)``.
        """
        cfg = self.cfg
        retired: list[int] = []
        for m in result.matched:
            t = self.tracks[m.track_id]
            det = dets[m.det_index]
            conf = after_match(ConfState(t.conf_pred, t.conf_prev), det.score, cfg.alpha, cfg.eps_conf)
            status = t.status
            self.hits[t.id] = self.hits.get(t.id, 0) + 1
            if status is TrackStatus.TENTATIVE and self.hits[t.id] >= cfg.confirm_hits:
                status = TrackStatus.CONFIRMED
            self.tracks[t.id] = replace(
                t,
                conf_pred=conf.current,
                conf_prev=conf.previous,
                miss_count=0,
                last_matched_frame=frame,
                status=status,
                length=det.length,
                width=det.width,
            )
        for tid in result.unmatched_tracks:
            t = self.tracks[tid]
            if t.status is TrackStatus.TENTATIVE:
                del self.tracks[tid]
                self.hits.pop(tid, None)
                continue
            conf = after_miss(ConfState(t.conf_pred, t.conf_prev), cfg.alpha, cfg.eps_conf)
            misses = t.miss_count + 1
            status = TrackStatus.RETIRED if misses > cfg.n_miss else t.status
            self.tracks[tid] = replace(
                t, conf_pred=conf.current, conf_prev=conf.previous, miss_count=misses, status=status
            )
            if status is TrackStatus.RETIRED:
                retired.append(tid)
        spawned = []
        for j in result.unmatched_detections:
            if dets[j].score >= cfg.spawn_score and dets[j].score >= cfg.discard_score:
                spawned.append(self.spawn(dets[j], ego_pose, frame))
        return spawned, retired


def manage_tracks(
    table: TrackTable,
    result: AssociationResult,
    dets: Sequence[Detection],
    frame: int,
    ego_pose: Pose2,
) -> tuple[list[TrackState], list[int]]:
    return table.manage(result, dets, frame, ego_pose)

