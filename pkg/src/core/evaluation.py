"""
Detection metrics for the three benchmark families.

- IoU-threshold matching and AP (KITTI style, 3D and BEV IoU, per difficulty)
- Center-distance matching, AP per distance threshold and TP errors (nuScenes style)
- Per-class AP and class-averaged mAP at IoU thresholds (indoor benchmarks)
- Room layout IoU and camera pitch/roll errors (scene-understanding benchmark)

Matching is greedy in descending score order (ties by input order). Ground
truths flagged ``ignore`` are never counted: a detection that can only match
an ignored gt is dropped from the precision/recall curve instead of being a
false positive.

Several scenes are evaluated by matching each scene separately and then
concatenating the match results in scene order before the global score sort.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ValidationError
from src.core.geometry import Box3D, aligned_extent_iou, iou3d, iou_matrix, normalize_angle
from src.core.losses import PoseAngles
from src.core.suppression import Detection, score_order

logger = logging.getLogger(__name__)

AP_MODES = ("interp40", "interp11", "all-points")
AOE_MODES = ("orientation", "heading")
DISTANCE_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)

TP, FP, DROPPED = 1, 0, -1


class Difficulty(Enum):
    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"

    @property
    def rank(self) -> int:
        return list(Difficulty).index(self)


# (min 2D box height px, max occlusion level, max truncation) per difficulty
KITTI_DIFFICULTY_LIMITS = {
    Difficulty.EASY: (40.0, 0, 0.15),
    Difficulty.MODERATE: (25.0, 1, 0.30),
    Difficulty.HARD: (25.0, 2, 0.50),
}


@dataclass(frozen=True)
class GroundTruthObject:
    """
    Annotated object.

    Attributes:
        box (Box3D): Ground-truth box
        class_id (int): Class label
        difficulty (Difficulty): KITTI difficulty, None when not applicable
        ignore (bool): True for objects that neither reward nor penalize
    """

    box: Box3D
    class_id: int = 0
    difficulty: Optional[Difficulty] = None
    ignore: bool = False


@dataclass(frozen=True)
class PrCurve:
    """
    Precision/recall staircase and its scalar AP.

    Attributes:
        recall (tuple): Non-decreasing recall after each counted detection
        precision (tuple): Precision after each counted detection
        ap (float): Average precision in [0, 1]
        mode (str): Interpolation mode used for ``ap``
        n_gt (int): Number of counted ground truths
    """

    recall: Tuple[float, ...]
    precision: Tuple[float, ...]
    ap: float
    mode: str = "interp40"
    n_gt: int = 0


@dataclass(frozen=True)
class TpErrors:
    """
    Mean errors over matched pairs.

    Attributes:
        ate (float): Translation error, BEV center distance in meters
        ase (float): Scale error, 1 - IoU after aligning centers and yaw
        aoe (float): Orientation error in radians
    """

    ate: float
    ase: float
    aoe: float

    def __post_init__(self):
        if self.ate < 0 or not 0.0 <= self.ase <= 1.0 or self.aoe < 0:
            raise ValidationError(f"Invalid TP errors ({self.ate}, {self.ase}, {self.aoe})")


@dataclass(frozen=True, eq=False)
class MatchResult:
    """
    Outcome of matching one set of detections against ground truth.

    Attributes:
        scores (np.ndarray): Detection scores, in input order
        labels (np.ndarray): TP (1), FP (0) or DROPPED (-1) per detection
        gt_matched (np.ndarray): Whether each gt was matched
        pairs (list): (detection index, gt index) of every TP
        n_gt (int): Number of non-ignored ground truths
    """

    scores: np.ndarray
    labels: np.ndarray
    gt_matched: np.ndarray
    pairs: List[Tuple[int, int]]
    n_gt: int

    @property
    def tp_count(self) -> int:
        return int(np.count_nonzero(self.labels == TP))

    @property
    def fp_count(self) -> int:
        return int(np.count_nonzero(self.labels == FP))


def _greedy_match(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthObject],
    quality: np.ndarray,
    accepts: Callable[[float], bool],
    higher_is_better: bool
) -> MatchResult:
    n_det, n_gt = len(dets), len(gts)
    labels = np.full(n_det, FP, dtype=np.int8)
    gt_matched = np.zeros(n_gt, dtype=bool)
    ignore = np.array([g.ignore for g in gts], dtype=bool)
    pairs = []
    sign = 1.0 if higher_is_better else -1.0
    for d in score_order(dets):
        best, best_value = -1, -math.inf
        for g in range(n_gt):
            if gt_matched[g] or ignore[g]:
                continue
            value = sign * quality[d, g]
            if value > best_value:
                best, best_value = g, value
        if best >= 0 and accepts(quality[d, best]):
            labels[d] = TP
            gt_matched[best] = True
            pairs.append((d, best))
        elif any(accepts(quality[d, g]) for g in np.flatnonzero(ignore)):
            labels[d] = DROPPED
    scores = np.array([det.score for det in dets], dtype=float)
    return MatchResult(scores, labels, gt_matched, pairs, int(n_gt - ignore.sum()))


def match_iou(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthObject],
    iou_threshold: float,
    iou_kind: str = "3d"
) -> MatchResult:
    """
    Match single-class detections to gts by IoU.

    A detection is a TP iff its best unmatched (non-ignored) gt has IoU >=
    ``iou_threshold``. Each gt is matched at most once.

    Args:
        iou_kind: "3d" or "bev"
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValidationError(f"IoU threshold must lie in [0, 1], got {iou_threshold}")
    quality = iou_matrix([d.box for d in dets], [g.box for g in gts], kind=iou_kind)
    return _greedy_match(dets, gts, quality, lambda iou: iou > 0.0 and iou >= iou_threshold, True)


def match_distance(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthObject],
    d_threshold: float
) -> MatchResult:
    """Match single-class detections to the nearest unmatched gt by BEV center distance <= ``d_threshold``."""
    if not d_threshold >= 0:
        raise ValidationError(f"Distance threshold must be non-negative, got {d_threshold}")
    quality = np.zeros((len(dets), len(gts)))
    if dets and gts:
        det_xy = np.array([[d.box.x, d.box.y] for d in dets])
        gt_xy = np.array([[g.box.x, g.box.y] for g in gts])
        quality = np.linalg.norm(det_xy[:, None, :] - gt_xy[None, :, :], axis=2)
    return _greedy_match(dets, gts, quality, lambda dist: dist <= d_threshold, False)


def concat_matches(results: Sequence[MatchResult]) -> MatchResult:
    """Concatenate per-scene match results in scene order."""
    if not results:
        return MatchResult(np.zeros(0), np.zeros(0, dtype=np.int8), np.zeros(0, dtype=bool), [], 0)
    pairs = []
    det_offset = gt_offset = 0
    for r in results:
        pairs.extend((d + det_offset, g + gt_offset) for d, g in r.pairs)
        det_offset += len(r.scores)
        gt_offset += len(r.gt_matched)
    return MatchResult(
        np.concatenate([r.scores for r in results]),
        np.concatenate([r.labels for r in results]),
        np.concatenate([r.gt_matched for r in results]),
        pairs,
        sum(r.n_gt for r in results),
    )


def average_precision(matches: MatchResult, n_gt: Optional[int] = None, mode: str = "interp40") -> PrCurve:
    """
    Precision/recall curve and AP of score-sorted matches.

    Modes:
        interp40: mean over recall points 1/40 ... 1 of the max precision at recall >= r
        interp11: the same over recall points 0, 0.1, ..., 1
        all-points: area under the monotone precision envelope

    Args:
        matches: Match result; DROPPED detections are skipped
        n_gt: Ground-truth count; defaults to ``matches.n_gt``
        mode: One of AP_MODES

    Returns:
        PrCurve; AP is 0 when there are no ground truths
    """
    if mode not in AP_MODES:
        raise ValidationError(f"Unknown AP mode '{mode}', expected one of {AP_MODES}")
    n_gt = matches.n_gt if n_gt is None else n_gt
    if n_gt < 0:
        raise ValidationError(f"Ground-truth count must be non-negative, got {n_gt}")
    counted = matches.labels != DROPPED
    scores = matches.scores[counted]
    labels = matches.labels[counted]
    if n_gt == 0:
        return PrCurve((), (), 0.0, mode, 0)

    order = np.argsort(-scores, kind="stable")
    is_tp = labels[order] == TP
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    ap = _integrate(recall, precision, mode)
    return PrCurve(tuple(recall.tolist()), tuple(precision.tolist()), ap, mode, n_gt)


def _integrate(recall: np.ndarray, precision: np.ndarray, mode: str) -> float:
    if recall.size == 0:
        return 0.0
    if mode == "all-points":
        mrec = np.concatenate([[0.0], recall, [1.0]])
        mpre = np.concatenate([[0.0], precision, [0.0]])
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        steps = np.flatnonzero(mrec[1:] != mrec[:-1])
        return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    points = np.linspace(1.0 / 40.0, 1.0, 40) if mode == "interp40" else np.linspace(0.0, 1.0, 11)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for r in points:
        reached = np.flatnonzero(recall >= r - 1e-12)
        total += float(envelope[reached[0]]) if reached.size else 0.0
    return total / len(points)


def angle_error(pred_theta: float, gt_theta: float, aoe_mode: str = "orientation") -> float:
    """
    Yaw error; ``orientation`` wraps the absolute difference to [0, pi],
    ``heading`` keeps the full turn in [0, 2*pi).
    """
    if aoe_mode not in AOE_MODES:
        raise ValidationError(f"Unknown AOE mode '{aoe_mode}', expected one of {AOE_MODES}")
    diff = pred_theta - gt_theta
    if aoe_mode == "orientation":
        return abs(normalize_angle(diff))
    return diff % (2.0 * math.pi)


def tp_errors(pairs: Sequence[Tuple[Box3D, Box3D]], aoe_mode: str = "orientation") -> TpErrors:
    """
    Mean translation, scale and orientation errors over (prediction, gt) pairs.

    Raises:
        ValidationError: If there are no pairs
    """
    if not pairs:
        raise ValidationError("tp_errors needs at least one matched pair")
    ate = np.mean([math.hypot(p.x - g.x, p.y - g.y) for p, g in pairs])
    ase = np.mean([1.0 - aligned_extent_iou(p, g) for p, g in pairs])
    aoe = np.mean([angle_error(p.theta, g.theta, aoe_mode) for p, g in pairs])
    return TpErrors(float(ate), float(min(max(ase, 0.0), 1.0)), float(aoe))


Scene = Tuple[Sequence[Detection], Sequence[GroundTruthObject]]


def _select_class(scene: Scene, class_id: int) -> Scene:
    dets, gts = scene
    return [d for d in dets if d.class_id == class_id], [g for g in gts if g.class_id == class_id]


def _class_ids(scenes: Sequence[Scene]) -> List[int]:
    ids = set()
    for dets, gts in scenes:
        ids.update(d.class_id for d in dets)
        ids.update(g.class_id for g in gts)
    return sorted(ids)


def _match_scenes(scenes: Sequence[Scene], matcher: Callable[[Scene], MatchResult]) -> MatchResult:
    if len(scenes) <= 1:
        return concat_matches([matcher(s) for s in scenes])
    with ThreadPoolExecutor() as pool:
        return concat_matches(list(pool.map(matcher, scenes)))


@dataclass(frozen=True)
class MapResult:
    """Per-class PR curves and the mean AP over classes that have ground truth."""

    per_class: Dict[int, PrCurve]
    mean_ap: float
    iou_threshold: float


def map_by_class(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthObject],
    iou_threshold: float,
    iou_kind: str = "3d",
    mode: str = "all-points"
) -> MapResult:
    """
    Per-class AP and mAP of a single scene; classes without gts are
    reported with AP 0 but excluded from the mean.
    """
    return map_by_class_scenes([(dets, gts)], iou_threshold, iou_kind, mode)


def map_by_class_scenes(
    scenes: Sequence[Scene],
    iou_threshold: float,
    iou_kind: str = "3d",
    mode: str = "all-points"
) -> MapResult:
    """map_by_class over several scenes, each matched on its own."""
    per_class = {}
    for class_id in _class_ids(scenes):
        per_scene = [_select_class(s, class_id) for s in scenes]
        matches = _match_scenes(per_scene, lambda s: match_iou(s[0], s[1], iou_threshold, iou_kind))
        per_class[class_id] = average_precision(matches, mode=mode)
    present = [curve.ap for curve in per_class.values() if curve.n_gt > 0]
    for class_id, curve in per_class.items():
        if curve.n_gt == 0:
            logger.warning(f"Class {class_id} has no ground truth; excluded from mAP")
    mean_ap = float(np.mean(present)) if present else 0.0
    return MapResult(per_class, mean_ap, iou_threshold)


def kitti_difficulty(height: float, occlusion: int, truncation: float) -> Optional[Difficulty]:
    """Easiest difficulty whose limits the object satisfies, or None when it fails all three."""
    for difficulty, (min_height, max_occlusion, max_truncation) in KITTI_DIFFICULTY_LIMITS.items():
        if height >= min_height and occlusion <= max_occlusion and truncation <= max_truncation:
            return difficulty
    return None


def kitti_difficulty_filter(
    gt: GroundTruthObject,
    height: float,
    truncation: float,
    occlusion: int
) -> GroundTruthObject:
    """
    Tag a gt with its KITTI difficulty from 2D box height, truncation and occlusion.

    Objects too small, occluded or truncated for any level come back with
    ``ignore=True``.

    Examples:
        >>> kitti_difficulty_filter(GroundTruthObject(Box3D(0, 0, 0, 1, 1, 1)), 50, 0.0, 0).difficulty
        <Difficulty.EASY: 'easy'>
    """
    difficulty = kitti_difficulty(height, occlusion, truncation)
    if difficulty is None:
        return replace(gt, difficulty=None, ignore=True)
    return replace(gt, difficulty=difficulty)


def _at_difficulty(gts: Sequence[GroundTruthObject], level: Difficulty) -> List[GroundTruthObject]:
    tagged = []
    for g in gts:
        harder = g.difficulty is not None and g.difficulty.rank > level.rank
        tagged.append(replace(g, ignore=True) if harder else g)
    return tagged


def kitti_protocol(
    scenes: Sequence[Scene],
    iou_threshold: float = 0.7,
    mode: str = "interp40"
) -> Dict[int, Dict[str, Dict[str, PrCurve]]]:
    """
    AP_3D and AP_BEV per class and difficulty.

    At each level, gts of a harder level are ignored; gts without a
    difficulty count at every level.

    Returns:
        ``result[class_id][difficulty][kind]`` with kind "3d" or "bev"
    """
    result: Dict[int, Dict[str, Dict[str, PrCurve]]] = {}
    for class_id in _class_ids(scenes):
        per_scene = [_select_class(s, class_id) for s in scenes]
        result[class_id] = {}
        for level in Difficulty:
            leveled = [(dets, _at_difficulty(gts, level)) for dets, gts in per_scene]
            result[class_id][level.value] = {
                kind: average_precision(
                    _match_scenes(leveled, lambda s, kind=kind: match_iou(s[0], s[1], iou_threshold, kind)),
                    mode=mode,
                )
                for kind in ("3d", "bev")
            }
        moderate = result[class_id][Difficulty.MODERATE.value]
        logger.info(
            f"Class {class_id} moderate AP_3D={moderate['3d'].ap:.4f} AP_BEV={moderate['bev'].ap:.4f} "
            f"at IoU {iou_threshold}"
        )
    return result


@dataclass(frozen=True)
class DistanceReport:
    """Center-distance evaluation of one class."""

    ap_by_threshold: Dict[float, PrCurve]
    mean_ap: float
    tp_errors: Optional[TpErrors]


def distance_protocol(
    scenes: Sequence[Scene],
    thresholds: Sequence[float] = DISTANCE_THRESHOLDS,
    tp_threshold: float = 2.0,
    mode: str = "all-points",
    aoe_mode: str = "orientation"
) -> Dict[int, DistanceReport]:
    """
    AP at each center-distance threshold, their mean, and TP errors of the
    matches at ``tp_threshold``.
    """
    reports = {}
    for class_id in _class_ids(scenes):
        per_scene = [_select_class(s, class_id) for s in scenes]
        curves = {
            float(t): average_precision(
                _match_scenes(per_scene, lambda s, t=t: match_distance(s[0], s[1], t)), mode=mode
            )
            for t in thresholds
        }
        pairs = []
        for dets, gts in per_scene:
            matched = match_distance(dets, gts, tp_threshold)
            pairs.extend((dets[d].box, gts[g].box) for d, g in matched.pairs)
        errors = tp_errors(pairs, aoe_mode) if pairs else None
        mean_ap = float(np.mean([c.ap for c in curves.values()])) if curves else 0.0
        reports[class_id] = DistanceReport(curves, mean_ap, errors)
    return reports


def indoor_protocol(
    scenes: Sequence[Scene],
    iou_thresholds: Sequence[float] = (0.25, 0.5),
    mode: str = "all-points"
) -> Dict[float, MapResult]:
    """Per-class AP and mAP at each IoU threshold."""
    results = {}
    for t in iou_thresholds:
        results[float(t)] = map_by_class_scenes(scenes, t, "3d", mode)
        logger.info(f"Indoor mAP@{t}: {results[float(t)].mean_ap:.4f}")
    return results


def layout_iou(pred: Box3D, gt: Box3D) -> float:
    """3D IoU between predicted and ground-truth room layout boxes."""
    return iou3d(pred, gt)


def pose_errors_deg(pred: PoseAngles, gt: PoseAngles) -> Tuple[float, float]:
    """Absolute pitch and roll errors in degrees, wrapped to [0, 180]."""
    return (
        math.degrees(abs(normalize_angle(pred.beta - gt.beta))),
        math.degrees(abs(normalize_angle(pred.gamma - gt.gamma))),
    )


def scene_understanding_metrics(
    layouts: Sequence[Tuple[Box3D, Box3D]],
    poses: Sequence[Tuple[PoseAngles, PoseAngles]]
) -> Dict[str, float]:
    """Mean layout IoU and mean pitch/roll errors (degrees) over scenes."""
    metrics = {}
    if layouts:
        metrics["layout_iou"] = float(np.mean([layout_iou(p, g) for p, g in layouts]))
    if poses:
        errors = np.array([pose_errors_deg(p, g) for p, g in poses])
        metrics["pitch_error_deg"] = float(errors[:, 0].mean())
        metrics["roll_error_deg"] = float(errors[:, 1].mean())
    return metrics
