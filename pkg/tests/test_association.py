import math
import numpy as np
import pytest

from slammot.association import (
    TrackTable,
    associate_frame,
    associate_tentative,
    build_components,
    component_negloglik,
    error_vector,
    select_component,
)
from slammot.confidence import detection_sigma
from slammot.core import Detection, TrackerConfig, TrackState, TrackStatus
from slammot.geometry import Pose2, Velocity2

CFG = TrackerConfig()


def det(x, y, yaw=0.0, score=0.9, frame=0):
    return Detection(Pose2(x, y, yaw), 4.0, 1.8, score, frame, 0.1 * frame)


def confirmed(tid, x, y, yaw=0.0, conf=1.0):
    return TrackState(tid, Pose2(x, y, yaw), Velocity2(), conf, status=TrackStatus.CONFIRMED)


class TestMixture:
    def test_component_weight(self):
        dets = [det(1, 0, score=0.9), det(5, 0, score=0.5)]
        comps = build_components(dets, Pose2(), CFG)
        for d, c in zip(dets, comps):
            n = detection_sigma(d.score, CFG.gamma_diag, CFG.beta, CFG.eps_det)
            assert c.log_c == pytest.approx(math.log(0.5) + n.log_det())
        assert comps[0].c > comps[1].c

    def test_components_in_map_frame(self):
        comps = build_components([det(2, 0)], Pose2(10, 0, math.pi / 2), CFG)
        p = comps[0].pose_map
        assert (p.x, p.y, p.yaw) == pytest.approx((10, 2, math.pi / 2))

    def test_select_picks_min_nll_and_error_vector(self):
        dets = [det(0.1, 0, score=0.9), det(3.0, 0, score=0.9)]
        comps = build_components(dets, Pose2(), CFG)
        j, e = select_component(Pose2(), comps)
        assert j == 0
        assert e[0] == pytest.approx(0.0)
        w = comps[0].sqrt_info @ np.array([-0.1, 0.0, 0.0])
        assert np.allclose(e[1:], w)
        # squared norm = 2 * (nll - nll_floor) with floor = -ln c_max
        assert 0.5 * float(e @ e) == pytest.approx(component_negloglik(Pose2(), comps[0]) + comps[0].log_c)

    def test_low_weight_component_pays_head_term(self):
        dets = [det(0.0, 0, score=0.9), det(0.0, 0.0, score=0.4)]
        comps = build_components(dets, Pose2(), CFG)
        e = error_vector(Pose2(), comps, 1)
        assert e[0] == pytest.approx(math.sqrt(2 * (comps[0].log_c - comps[1].log_c)))

    def test_select_empty_raises(self):
        with pytest.raises(ValueError):
            select_component(Pose2(), [])


class TestAssociateFrame:
    def test_one_to_one_nearest(self):
        tracks = [confirmed(1, 0, 0), confirmed(2, 10, 0)]
        dets = [det(10.1, 0), det(0.1, 0)]
        r = associate_frame(tracks, dets, Pose2(), CFG)
        assert [(m.track_id, m.det_index) for m in r.matched] == [(1, 1), (2, 0)]
        assert r.unmatched_tracks == [] and r.unmatched_detections == []

    def test_gate_rejects_far_detection(self):
        r = associate_frame([confirmed(1, 0, 0)], [det(5, 0)], Pose2(), CFG)
        assert r.matched == [] and r.unmatched_tracks == [1] and r.unmatched_detections == [0]

    def test_low_confidence_widens_gate(self):
        # score 0.99 -> covariance = gamma^2 * 0.8, d2 = 0.8^2 / 0.072 ~ 8.9
        d = [det(0.8, 0.0, score=0.99)]
        assert associate_frame([confirmed(1, 0, 0, conf=1.0)], d, Pose2(), CFG).matched == []
        assert len(associate_frame([confirmed(1, 0, 0, conf=0.7)], d, Pose2(), CFG).matched) == 1

    def test_contested_detection_falls_back(self):
        # both tracks prefer det 0; track 2 is further so it takes det 1
        tracks = [confirmed(1, 0, 0), confirmed(2, 0.4, 0)]
        dets = [det(0.1, 0, score=0.5), det(0.6, 0, score=0.5)]
        r = associate_frame(tracks, dets, Pose2(), CFG)
        assert sorted((m.track_id, m.det_index) for m in r.matched) == [(1, 0), (2, 1)]

    def test_no_detections(self):
        r = associate_frame([confirmed(1, 0, 0)], [], Pose2(), CFG)
        assert r.unmatched_tracks == [1] and r.matched == []

    def test_tentative_nearest_neighbour(self):
        t = TrackState(7, Pose2(0, 0, 0), Velocity2(), 0.9)
        dets = [det(2.5, 0), det(1.0, 0), det(50, 0)]
        m = associate_tentative([t], dets, [0, 1, 2], Pose2(), 3.0)
        assert [(x.track_id, x.det_index) for x in m] == [(7, 1)]
        assert associate_tentative([t], dets, [2], Pose2(), 3.0) == []


class TestLifecycle:
    def run(self, table, tracks_hit, dets, frame):
        from slammot.association import AssociationResult, Match

        matched = [Match(tid, j, np.zeros(4)) for tid, j in tracks_hit]
        hit = {tid for tid, _ in tracks_hit}
        used = {j for _, j in tracks_hit}
        res = AssociationResult(
            matched,
            [t.id for t in table.active() if t.id not in hit],
            [j for j in range(len(dets)) if j not in used],
        )
        return table.manage(res, dets, frame, Pose2())

    def test_spawn_confirm_and_retire(self):
        cfg = TrackerConfig(n_miss=3)
        table = TrackTable(cfg)
        spawned, _ = self.run(table, [], [det(0, 0, score=0.8), det(9, 9, score=0.4)], 0)
        assert [t.id for t in spawned] == [1]  # 0.4 < spawn_score
        assert table.tracks[1].status is TrackStatus.TENTATIVE
        assert table.tracks[1].conf_pred == 0.8
        self.run(table, [(1, 0)], [det(0, 0)], 1)
        assert table.tracks[1].status is TrackStatus.CONFIRMED
        retired = []
        for k in range(2, 6):
            _, r = self.run(table, [], [], k)
            retired += r
        assert retired == [1]
        assert table.tracks[1].miss_count == 4
        assert table.active() == []

    def test_unmatched_tentative_dropped(self):
        table = TrackTable(CFG)
        self.run(table, [], [det(0, 0)], 0)
        self.run(table, [], [], 1)
        assert table.tracks == {}

    def test_match_resets_misses_and_restores_confidence(self):
        table = TrackTable(CFG)
        table.set_state(confirmed(1, 0, 0, conf=1.0))
        for k in range(3):
            self.run(table, [], [], k)
        t = table.tracks[1]
        assert t.miss_count == 3 and t.conf_pred == pytest.approx(0.97**3)
        self.run(table, [(1, 0)], [det(0, 0, score=0.5)], 3)
        t = table.tracks[1]
        assert t.miss_count == 0 and t.conf_pred == pytest.approx(0.97**3 + 0.015)

    def test_ids_monotonic(self):
        table = TrackTable(CFG)
        a, _ = self.run(table, [], [det(0, 0), det(10, 0)], 0)
        self.run(table, [], [], 1)
        b, _ = self.run(table, [], [det(0, 0)], 2)
        assert [t.id for t in a] == [1, 2] and [t.id for t in b] == [3]

    def test_single_hit_confirmation(self):
        table = TrackTable(CFG.replace(confirm_hits=1))
        s, _ = self.run(table, [], [det(0, 0)], 0)
        assert s[0].status is TrackStatus.CONFIRMED
