"""Frame-by-frame driver for the joint ego/object backend.

Per frame ``k``:

1. Odometry is accumulated since the latest keyframe ``k*``; every
   ``keyframe_stride`` frames a new ego keyframe and odometry factor are added.
2. Detections below ``discard_score`` are dropped and the rest are promoted
   into the ``k*`` ego frame (virtual keyframe measurements).
3. Confirmed tracks get new pose/velocity variables at ``k`` initialised by
   CTRV prediction, tied to ``k-1`` by motion and velocity factors.
4. Confidence-gated association; a matched track receives a max-mixture
   perception factor over every detection that passed its gate.
5. Lifecycle update (confidence, misses, retirement, spawning). Tentative
   tracks live outside the graph until confirmed.
6. On keyframes the whole graph is re-optimised.

After the last frame the graph is optimised once more and every frame's
estimates are read back, so reported states are smoothed.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence


from .association import (
    AssociationResult,
    Match,
    TrackTable,
    associate_frame,
    associate_tentative,
)
from .core import Detection, TrackerConfig, TrackState, TrackStatus
from .ctrv import ctrv_predict
from .geometry import NoiseModel, Pose2, Velocity2, compose, wrap_angle
from .graph import (
    FactorGraph,
    PerceptionPayload,
    add_motion,
    add_odometry,
    add_perception,
    add_prior,
    add_velocity,
    ego_key,
    obj_key,
    perception_payload,
    promote_to_keyframe,
    vel_key,
)
from .solver import SolveReport, SolverOptions, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrameInput:
    frame: int
    stamp: float
    odometry: Pose2  # ego motion from the previous frame; ignored on the first frame
    detections: tuple[Detection, ...] = ()


@dataclass(frozen=True)
class TrackOutput:
    track_id: int
    frame: int
    pose: Pose2
    vel: Velocity2
    conf_pred: float
    length: float
    width: float


@dataclass
class TrackingResult:
    frames: list[int]
    stamps: list[float]
    ego: list[Pose2]
    tracks: list[list[TrackOutput]]
    solve_log: list[dict]
    timings: dict = field(default_factory=dict)


@dataclass
class _History:
    frames: list[int] = field(default_factory=list)
    matched: list[int] = field(default_factory=list)
    conf: dict[int, float] = field(default_factory=dict)
    size: tuple[float, float] = (4.0, 1.8)


@dataclass
class _Tentative:
    # (frame, detection index in that frame, map pose at association time)
    seen: list[tuple[int, int, Pose2]] = field(default_factory=list)


class SlamMotTracker:
    """Online front half (prediction, association, lifecycle) over a batch back end."""

    def __init__(self, cfg: TrackerConfig | None = None, initial_pose: Pose2 | None = None):
        self.cfg = cfg or TrackerConfig()
        self.initial_pose = initial_pose or Pose2()
        self.graph = FactorGraph()
        self.table = TrackTable(self.cfg)
        self.odo_noise = NoiseModel.from_sigmas(self.cfg.odom_sigmas)
        self.motion_noise = NoiseModel.from_sigmas(self.cfg.motion_sigmas)
        self.vel_noise = NoiseModel.from_sigmas(self.cfg.velocity_sigmas)
        self.prior_noise = NoiseModel.from_sigmas(self.cfg.prior_sigmas)
        self.history: dict[int, _History] = {}
        self.tentative: dict[int, _Tentative] = {}
        self.promoted: dict[int, tuple[int, list[Detection]]] = {}
        self.frames: list[int] = []
        self.stamps: dict[int, float] = {}
        self.ego_link: dict[int, tuple[int, Pose2]] = {}
        self.solve_log: list[dict] = []
        self.keyframe_ms: list[float] = []
        self.assoc_ms: list[float] = []
        self.solve_ms: list[float] = []
        self._assoc_since_kf = 0.0
        self._last_kf: int | None = None
        self._since_kf = Pose2()
        self._first_frame: int | None = None
        self._dirty = False

    # -- ego ------------------------------------------------------------------

    def ego_pose(self, frame: int) -> Pose2:
        kf, rel = self.ego_link[frame]
        return compose(self.graph.pose(ego_key(kf)), rel)

    def _advance_ego(self, fin: FrameInput) -> bool:
        k = fin.frame
        if self._last_kf is None:
            self.graph.add_variable(ego_key(k), self.initial_pose)
            add_prior(self.graph, ego_key(k), self.initial_pose, self.prior_noise)
            self._first_frame = self._last_kf = k
            self._since_kf = Pose2()
            self.ego_link[k] = (k, Pose2())
            return True
        self._since_kf = compose(self._since_kf, fin.odometry)
        is_kf = (k - self._first_frame) % self.cfg.keyframe_stride == 0
        if is_kf:
            add_odometry(self.graph, self._last_kf, k, self._since_kf, self.odo_noise)
            self._last_kf = k
            self._since_kf = Pose2()
        self.ego_link[k] = (self._last_kf, self._since_kf)
        return is_kf

    # -- main loop --------------------------------------------------------------

    def step(self, fin: FrameInput) -> None:
        k = fin.frame
        if self.frames and k <= self.frames[-1]:
            raise ValueError(f"frames must increase: got {k} after {self.frames[-1]}")
        cfg = self.cfg
        is_kf = self._advance_ego(fin)
        self.frames.append(k)
        self.stamps[k] = fin.stamp
        ego = self.ego_pose(k)
        kstar, rel = self.ego_link[k]

        dets = [d for d in fin.detections if d.score >= cfg.discard_score]
        promoted = promote_to_keyframe(dets, rel)
        self.promoted[k] = (kstar, promoted)

        t0 = time.perf_counter()
        confirmed = self._predict_confirmed(k, fin.stamp)
        result = associate_frame(confirmed, dets, ego, cfg)
        tentatives = self.table.active(TrackStatus.TENTATIVE)
        tmatches = associate_tentative(tentatives, dets, result.unmatched_detections, ego, cfg.tentative_gate_m)
        used = {m.det_index for m in tmatches}
        tids = {m.track_id for m in tmatches}
        merged = AssociationResult(
            matched=result.matched + tmatches,
            unmatched_tracks=result.unmatched_tracks + [t.id for t in tentatives if t.id not in tids],
            unmatched_detections=[j for j in result.unmatched_detections if j not in used],
        )
        was_tentative = {t.id for t in tentatives}
        spawned, retired = self.table.manage(merged, dets, k, ego)
        self._assoc_since_kf += (time.perf_counter() - t0) * 1e3

        for m in merged.matched:
            if m.track_id in was_tentative:
                self._tentative_matched(m, dets, k, ego)
            else:
                self._add_perception(m.track_id, k, dets[m.det_index], ego, result.candidates[m.track_id])
        for tid in merged.unmatched_tracks:
            if tid in was_tentative:
                self.tentative.pop(tid, None)
        for t in spawned:
            j = _det_index(dets, t, ego)
            self.tentative[t.id] = _Tentative([(k, j, t.pose_map)])
            if t.status is TrackStatus.CONFIRMED:
                self._confirm(t.id)
        for tid, h in self.history.items():
            st = self.table.tracks.get(tid)
            if st is not None and st.status is not TrackStatus.RETIRED and h.frames and h.frames[-1] == k:
                h.conf[k] = st.conf_pred
        self._dirty = True
        if is_kf:
            self._optimize(k)

    def _predict_confirmed(self, k: int, stamp: float) -> list[TrackState]:
        out = []
        for t in self.table.active(TrackStatus.CONFIRMED):
            h = self.history[t.id]
            last = h.frames[-1]
            dt = stamp - self.stamps[last]
            o_prev = self.graph.pose(obj_key(t.id, last))
            v_prev = self.graph.velocity(vel_key(t.id, last))
            pred = ctrv_predict(o_prev, v_prev, dt, self.cfg.eps_omega)
            self.graph.add_variable(obj_key(t.id, k), pred)
            self.graph.add_variable(vel_key(t.id, k), v_prev)
            add_motion(self.graph, t.id, last, k, dt, self.motion_noise)
            add_velocity(self.graph, t.id, last, k, self.vel_noise)
            h.frames.append(k)
            t = replace(t, pose_map=pred, vel=v_prev)
            self.table.set_state(t)
            out.append(t)
        return out

    def _payload(self, k: int, det_indices: Sequence[int]) -> tuple[int, PerceptionPayload]:
        kstar, promoted = self.promoted[k]
        cfg = self.cfg
        payload = perception_payload([promoted[j] for j in det_indices], cfg.gamma_diag, cfg.beta, cfg.eps_det)
        return kstar, replace(payload, det_indices=tuple(det_indices))

    def _add_perception(self, tid: int, k: int, det: Detection, ego: Pose2, candidates: Sequence[int]) -> None:
        kstar, payload = self._payload(k, candidates)
        self.graph.set_value(obj_key(tid, k), compose(ego, det.pose_ego))
        add_perception(self.graph, kstar, tid, k, payload)
        h = self.history[tid]
        h.matched.append(k)
        h.size = (det.length, det.width)

    def _tentative_matched(self, m: Match, dets: Sequence[Detection], k: int, ego: Pose2) -> None:
        pose = compose(ego, dets[m.det_index].pose_ego)
        self.tentative[m.track_id].seen.append((k, m.det_index, pose))
        st = self.table.tracks[m.track_id]
        self.table.set_state(replace(st, pose_map=pose))
        if st.status is TrackStatus.CONFIRMED:
            self._confirm(m.track_id)

    def _confirm(self, tid: int) -> None:
        """Move a freshly confirmed track's detection history into the graph."""
        tent = self.tentative.pop(tid)
        seen = tent.seen
        h = _History()
        self.history[tid] = h
        vels = []
        for (f0, _, p0), (f1, _, p1) in zip(seen, seen[1:]):
            dt = self.stamps[f1] - self.stamps[f0]
            v = ((p1.x - p0.x) * math.cos(p0.yaw) + (p1.y - p0.y) * math.sin(p0.yaw)) / dt
            w = wrap_angle(p1.yaw - p0.yaw) / dt
            w = max(-self.cfg.max_turn_rate, min(self.cfg.max_turn_rate, w))
            vels.append(Velocity2(v, w))
        vels.append(vels[-1] if vels else Velocity2())
        conf = self.table.tracks[tid].conf_pred
        for i, (f, j, pose) in enumerate(seen):
            self.graph.add_variable(obj_key(tid, f), pose)
            self.graph.add_variable(vel_key(tid, f), vels[i])
            kstar, payload = self._payload(f, [j])
            add_perception(self.graph, kstar, tid, f, payload)
            det = self.promoted[f][1][j]
            if i > 0:
                fp = seen[i - 1][0]
                add_motion(self.graph, tid, fp, f, self.stamps[f] - self.stamps[fp], self.motion_noise)
                add_velocity(self.graph, tid, fp, f, self.vel_noise)
            h.frames.append(f)
            h.matched.append(f)
            h.conf[f] = conf
            h.size = (det.length, det.width)
        st = self.table.tracks[tid]
        self.table.set_state(replace(st, vel=vels[-1]))

    def _optimize(self, k: int) -> SolveReport:
        fixed = frozenset()
        if self.cfg.fixed_lag_frames > 0:
            horizon = k - self.cfg.fixed_lag_frames
            fixed = frozenset(key for key in self.graph.variables if key.frame < horizon)
            # keep the oldest free keyframe connected to something fixed or a prior
        t0 = time.perf_counter()
        report = solve(self.graph, SolverOptions(max_iterations=self.cfg.max_iterations, fixed=fixed,
                                                 eps_omega=self.cfg.eps_omega))
        solve_ms = (time.perf_counter() - t0) * 1e3
        self.solve_ms.append(solve_ms)
        self.assoc_ms.append(self._assoc_since_kf)
        self.keyframe_ms.append(solve_ms + self._assoc_since_kf)
        self._assoc_since_kf = 0.0
        self.solve_log.append({"frame": k, **report.as_dict()})
        for t in self.table.active(TrackStatus.CONFIRMED):
            last = self.history[t.id].frames[-1]
            self.table.set_state(
                replace(
                    t,
                    pose_map=self.graph.pose(obj_key(t.id, last)),
                    vel=self.graph.velocity(vel_key(t.id, last)),
                )
            )
        self._dirty = False
        return report

    def finish(self) -> TrackingResult:
        if self._dirty and self.frames:
            self._optimize(self.frames[-1])
        ego = [self.ego_pose(k) for k in self.frames]
        index = {k: i for i, k in enumerate(self.frames)}
        per_frame: list[list[TrackOutput]] = [[] for _ in self.frames]
        for tid in sorted(self.history):
            h = self.history[tid]
            if not h.matched:
                continue
            lo, hi = h.matched[0], h.matched[-1]
            for f in h.frames:
                if f < lo or f > hi:
                    continue
                per_frame[index[f]].append(
                    TrackOutput(
                        track_id=tid,
                        frame=f,
                        pose=self.graph.pose(obj_key(tid, f)),
                        vel=self.graph.velocity(vel_key(tid, f)),
                        conf_pred=h.conf.get(f, 1.0),
                        length=h.size[0],
                        width=h.size[1],
                    )
                )
        timings = {
            "keyframe_backend_ms": list(self.keyframe_ms),
            "association_ms": list(self.assoc_ms),
            "solve_ms": list(self.solve_ms),
        }
        return TrackingResult(
            frames=list(self.frames),
            stamps=[self.stamps[k] for k in self.frames],
            ego=ego,
            tracks=per_frame,
            solve_log=list(self.solve_log),
            timings=timings,
        )


def _det_index(dets: Sequence[Detection], track: TrackState, ego: Pose2) -> int:
    best, best_d = 0, math.inf
    for j, d in enumerate(dets):
        p = compose(ego, d.pose_ego)
        dist = math.hypot(p.x - track.pose_map.x, p.y - track.pose_map.y)
        if dist < best_d:
            best, best_d = j, dist
    return best


def run_tracker(frames: Iterable[FrameInput], cfg: TrackerConfig | None = None,
                initial_pose: Pose2 | None = None) -> TrackingResult:
    tracker = SlamMotTracker(cfg, initial_pose)
    for fin in frames:
        tracker.step(fin)
    return tracker.finish()


def frames_from_scenario(data) -> list[FrameInput]:
    return [
        FrameInput(k, data.stamps[k], data.odometry[k], tuple(data.detections[k]))
        for k in range(data.n_frames)
    ]


def integrate_odometry(odometry: Sequence[Pose2], initial_pose: Pose2 | None = None) -> list[Pose2]:
    """Dead-reckoned ego trajectory; the first entry of ``odometry`` is ignored."""
    poses = [initial_pose or Pose2()]
    for rel in odometry[1:]:
        poses.append(compose(poses[-1], rel))
    return poses
