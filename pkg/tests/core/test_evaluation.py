import math

import numpy as np
import pytest

from src.core.errors import ValidationError
from src.core.evaluation import (
    DROPPED,
    FP,
    TP,
    Difficulty,
    GroundTruthObject,
    MatchResult,
    angle_error,
    average_precision,
    concat_matches,
    distance_protocol,
    indoor_protocol,
    kitti_difficulty,
    kitti_difficulty_filter,
    kitti_protocol,
    map_by_class,
    map_by_class_scenes,
    match_distance,
    match_iou,
    pose_errors_deg,
    scene_understanding_metrics,
    tp_errors,
)
from src.core.geometry import Box3D
from src.core.losses import PoseAngles
from src.core.suppression import Detection

CAR = Box3D(10.0, 2.0, -1.0, 1.6, 1.5, 3.9, 0.2)


def gt(box, class_id=0, **kwargs):
    return GroundTruthObject(box, class_id, **kwargs)


def staircase(labels, scores=None, n_gt=None):
    labels = np.array(labels, dtype=np.int8)
    scores = np.linspace(0.9, 0.1, len(labels)) if scores is None else np.array(scores, dtype=float)
    n = int(np.count_nonzero(labels == TP)) if n_gt is None else n_gt
    return MatchResult(scores, labels, np.zeros(n, dtype=bool), [], n)


class TestMatching:
    def test_perfect_match(self):
        boxes = [CAR, CAR.translated(dx=10.0), CAR.translated(dy=-6.0)]
        result = match_iou([Detection(b, 0.9 - 0.1 * i) for i, b in enumerate(boxes)], [gt(b) for b in boxes], 0.7)
        assert result.tp_count == 3
        assert result.fp_count == 0
        assert sorted(result.pairs) == [(0, 0), (1, 1), (2, 2)]

    def test_duplicate_detection_is_false_positive(self):
        result = match_iou([Detection(CAR, 0.6), Detection(CAR, 0.9)], [gt(CAR)], 0.7)
        assert result.labels.tolist() == [FP, TP]
        assert result.pairs == [(1, 0)]

    def test_below_threshold_is_false_positive(self):
        shifted = CAR.translated(dx=1.5)
        result = match_iou([Detection(shifted, 0.9)], [gt(CAR)], 0.7)
        assert result.labels.tolist() == [FP]
        assert not result.gt_matched[0]

    def test_detection_on_ignored_gt_is_dropped(self):
        result = match_iou([Detection(CAR, 0.9)], [gt(CAR, ignore=True)], 0.5)
        assert result.labels.tolist() == [DROPPED]
        assert result.n_gt == 0

    def test_bev_kind_ignores_height(self):
        lifted = CAR.translated(dz=5.0)
        assert match_iou([Detection(lifted, 0.9)], [gt(CAR)], 0.7, "3d").tp_count == 0
        assert match_iou([Detection(lifted, 0.9)], [gt(CAR)], 0.7, "bev").tp_count == 1

    def test_rejects_bad_threshold(self):
        with pytest.raises(ValidationError):
            match_iou([], [], 1.5)

    def test_distance_match_is_inclusive(self):
        dets = [Detection(CAR.translated(dx=2.0), 0.9)]
        assert match_distance(dets, [gt(CAR)], 2.0).tp_count == 1
        assert match_distance(dets, [gt(CAR)], 1.999).tp_count == 0

    def test_distance_match_prefers_nearest(self):
        near = CAR.translated(dx=0.4)
        far = CAR.translated(dx=1.5)
        result = match_distance([Detection(CAR, 0.9)], [gt(far), gt(near)], 2.0)
        assert result.pairs == [(0, 1)]

    def test_concat_offsets_pairs(self):
        a = match_iou([Detection(CAR, 0.9)], [gt(CAR)], 0.5)
        b = match_iou([Detection(CAR, 0.8), Detection(CAR, 0.7)], [gt(CAR.translated(dx=9)), gt(CAR)], 0.5)
        merged = concat_matches([a, b])
        assert merged.pairs == [(0, 0), (1, 2)]
        assert merged.n_gt == 3
        assert len(merged.scores) == 3

    def test_concat_of_nothing(self):
        assert concat_matches([]).n_gt == 0


class TestAveragePrecision:
    def test_perfect_curve(self):
        for mode in ("interp40", "interp11", "all-points"):
            assert average_precision(staircase([TP, TP, TP]), mode=mode).ap == pytest.approx(1.0)

    def test_hand_computed_curve(self):
        matches = staircase([TP, FP, TP], n_gt=2)
        curve = average_precision(matches, mode="all-points")
        assert curve.recall == pytest.approx((0.5, 0.5, 1.0))
        assert curve.precision == pytest.approx((1.0, 0.5, 2.0 / 3.0))
        assert curve.ap == pytest.approx(0.5 + 0.5 * 2.0 / 3.0)
        assert average_precision(matches, mode="interp40").ap == pytest.approx((20 + 20 * 2.0 / 3.0) / 40)
        assert average_precision(matches, mode="interp11").ap == pytest.approx((6 + 5 * 2.0 / 3.0) / 11)

    def test_curve_is_sorted_by_score(self):
        matches = staircase([FP, TP], scores=[0.2, 0.9], n_gt=1)
        assert average_precision(matches).precision == pytest.approx((1.0, 0.5))

    def test_dropped_detections_do_not_count(self):
        matches = staircase([TP, DROPPED, DROPPED], n_gt=1)
        curve = average_precision(matches)
        assert len(curve.recall) == 1
        assert curve.ap == pytest.approx(1.0)

    def test_missed_ground_truth_caps_recall(self):
        curve = average_precision(staircase([TP], n_gt=4), mode="all-points")
        assert curve.recall[-1] == pytest.approx(0.25)
        assert curve.ap == pytest.approx(0.25)

    def test_no_ground_truth_gives_zero(self):
        curve = average_precision(staircase([FP, FP], n_gt=0))
        assert curve.ap == 0.0
        assert curve.recall == ()

    def test_no_detections_gives_zero(self):
        assert average_precision(staircase([], n_gt=3)).ap == 0.0

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValidationError):
            average_precision(staircase([TP]), mode="interp101")


class TestTpErrors:
    def test_identical_pairs(self):
        errors = tp_errors([(CAR, CAR)])
        assert (errors.ate, errors.ase, errors.aoe) == pytest.approx((0.0, 0.0, 0.0))

    def test_translation_error(self):
        assert tp_errors([(CAR.translated(dx=3.0, dy=4.0), CAR)]).ate == pytest.approx(5.0)

    def test_scale_error_ignores_position_and_yaw(self):
        big = Box3D(50.0, 0.0, 0.0, 2.0, 2.0, 2.0, 1.0)
        small = Box3D(0.0, 0.0, 0.0, 1.0, 1.0, 1.0)
        assert tp_errors([(big, small)]).ase == pytest.approx(1.0 - 1.0 / 8.0)

    def test_orientation_modes(self):
        flipped = Box3D(CAR.x, CAR.y, CAR.z, CAR.w, CAR.h, CAR.l, CAR.theta + math.pi)
        assert tp_errors([(flipped, CAR)], "orientation").aoe == pytest.approx(math.pi)
        assert angle_error(-0.1, 0.0, "heading") == pytest.approx(2 * math.pi - 0.1)
        assert angle_error(-0.1, 0.0, "orientation") == pytest.approx(0.1)

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            tp_errors([])

    def test_rejects_unknown_aoe_mode(self):
        with pytest.raises(ValidationError):
            angle_error(0.0, 0.0, "yaw")


class TestKitti:
    @pytest.mark.parametrize("height, occlusion, truncation, expected", [
        (50.0, 0, 0.0, Difficulty.EASY),
        (40.0, 0, 0.15, Difficulty.EASY),
        (30.0, 1, 0.2, Difficulty.MODERATE),
        (30.0, 2, 0.4, Difficulty.HARD),
        (20.0, 0, 0.0, None),
        (50.0, 3, 0.0, None),
        (50.0, 0, 0.6, None),
    ])
    def test_difficulty_levels(self, height, occlusion, truncation, expected):
        assert kitti_difficulty(height, occlusion, truncation) is expected

    def test_filter_flags_unusable_objects(self):
        tagged = kitti_difficulty_filter(gt(CAR), 10.0, 0.0, 0)
        assert tagged.ignore
        assert tagged.difficulty is None

    def test_harder_objects_are_ignored_at_easier_levels(self):
        easy_box = CAR
        hard_box = CAR.translated(dx=15.0)
        gts = [gt(easy_box, difficulty=Difficulty.EASY), gt(hard_box, difficulty=Difficulty.HARD)]
        dets = [Detection(easy_box, 0.9), Detection(hard_box, 0.8)]
        result = kitti_protocol([(dets, gts)], iou_threshold=0.7)
        assert result[0]["easy"]["3d"].n_gt == 1
        assert result[0]["hard"]["3d"].n_gt == 2
        for level in ("easy", "moderate", "hard"):
            for kind in ("3d", "bev"):
                assert result[0][level][kind].ap == pytest.approx(1.0)

    def test_missed_hard_object_only_hurts_hard(self):
        gts = [gt(CAR, difficulty=Difficulty.EASY), gt(CAR.translated(dx=15.0), difficulty=Difficulty.HARD)]
        result = kitti_protocol([([Detection(CAR, 0.9)], gts)])
        assert result[0]["easy"]["3d"].ap == pytest.approx(1.0)
        assert result[0]["hard"]["3d"].ap == pytest.approx(0.5)


class TestProtocols:
    def test_scenes_are_matched_separately(self):
        scene_a = ([], [gt(CAR)])
        scene_b = ([Detection(CAR, 0.9)], [])
        result = map_by_class_scenes([scene_a, scene_b], 0.5)
        assert result.per_class[0].ap == 0.0

    def test_class_without_gt_is_excluded_from_mean(self):
        dets = [Detection(CAR, 0.9, 0), Detection(CAR.translated(dx=10), 0.8, 1)]
        result = map_by_class(dets, [gt(CAR, 0)], 0.5)
        assert result.per_class[1].ap == 0.0
        assert result.mean_ap == pytest.approx(1.0)

    def test_indoor_protocol_thresholds(self):
        table = Box3D(1.0, 1.0, 0.4, 0.8, 0.8, 1.2)
        loose = table.translated(dx=0.6)
        result = indoor_protocol([([Detection(loose, 0.9, 2)], [gt(table, 2)])])
        assert set(result) == {0.25, 0.5}
        assert result[0.25].mean_ap == pytest.approx(1.0)
        assert result[0.5].mean_ap == 0.0

    def test_distance_protocol_perfect(self):
        boxes = [CAR, CAR.translated(dx=10.0)]
        reports = distance_protocol([([Detection(b, 0.5 + 0.1 * i) for i, b in enumerate(boxes)],
                                      [gt(b) for b in boxes])])
        report = reports[0]
        assert set(report.ap_by_threshold) == {0.5, 1.0, 2.0, 4.0}
        assert report.mean_ap == pytest.approx(1.0)
        assert report.tp_errors.ate == pytest.approx(0.0)

    def test_distance_protocol_ap_grows_with_threshold(self):
        det = Detection(CAR.translated(dx=1.5), 0.9)
        report = distance_protocol([([det], [gt(CAR)])])[0]
        assert report.ap_by_threshold[0.5].ap == 0.0
        assert report.ap_by_threshold[2.0].ap == pytest.approx(1.0)
        assert report.mean_ap == pytest.approx(0.5)
        assert report.tp_errors.ate == pytest.approx(1.5)

    def test_distance_protocol_without_matches_has_no_tp_errors(self):
        report = distance_protocol([([Detection(CAR.translated(dx=30.0), 0.9)], [gt(CAR)])])[0]
        assert report.tp_errors is None


class TestSceneUnderstanding:
    def test_pose_errors_wrap(self):
        pitch, roll = pose_errors_deg(PoseAngles(math.radians(179), 0.0), PoseAngles(math.radians(-179), 0.1))
        assert pitch == pytest.approx(2.0)
        assert roll == pytest.approx(math.degrees(0.1))

    def test_metrics(self):
        room = Box3D(0.0, 0.0, 1.5, 6.0, 3.0, 8.0)
        metrics = scene_understanding_metrics(
            [(room, room)], [(PoseAngles(0.0, 0.0), PoseAngles(math.radians(2.0), 0.0))]
        )
        assert metrics["layout_iou"] == pytest.approx(1.0)
        assert metrics["pitch_error_deg"] == pytest.approx(2.0)
        assert metrics["roll_error_deg"] == pytest.approx(0.0)

    def test_empty_inputs(self):
        assert scene_understanding_metrics([], []) == {}
