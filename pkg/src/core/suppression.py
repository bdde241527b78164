"""
Greedy rotated non-maximum suppression on ground-plane footprints.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

from src.core.errors import ValidationError
from src.core.geometry import Box3D, iou_bev

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    """
    Scored prediction.

    Attributes:
        box (Box3D): Predicted box
        score (float): Confidence in [0, 1]
        class_id (int): Class label
    """

    box: Box3D
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"Detection score must lie in [0, 1], got {self.score}")


def score_order(dets: Sequence[Detection]) -> List[int]:
    """Indices sorted by descending score, ties by ascending index."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def _suppresses(iou: float, iou_threshold: float) -> bool:
    return iou > 0.0 and iou >= iou_threshold


def rotated_nms(dets: Sequence[Detection], iou_threshold: float) -> List[int]:
    """
    Class-wise greedy NMS on rotated BEV footprints.

    A detection is kept iff its BEV IoU with every already-kept detection of the
    same class is strictly below ``iou_threshold``. Footprints that do not
    overlap at all never suppress each other, so a threshold of 0 keeps one
    detection per overlapping group; a threshold of 1 keeps everything.

    Returns:
        Indices of kept detections into ``dets``, in descending-score order

    Raises:
        ValidationError: Unless 0 <= iou_threshold <= 1

    Examples:
        >>> box = Box3D(0, 0, 0, 1.6, 1.5, 3.9)
        >>> rotated_nms([Detection(box, 0.8), Detection(box, 0.9)], 0.5)
        [1]
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValidationError(f"NMS threshold must lie in [0, 1], got {iou_threshold}")
    if iou_threshold == 1.0:
        return score_order(dets)
    kept: List[int] = []
    kept_by_class: Dict[int, List[Box3D]] = {}
    for i in score_order(dets):
        det = dets[i]
        same_class = kept_by_class.setdefault(det.class_id, [])
        if not any(_suppresses(iou_bev(det.box, other), iou_threshold) for other in same_class):
            kept.append(i)
            same_class.append(det.box)
    logger.debug(f"rotated_nms kept {len(kept)} of {len(dets)} detections at threshold {iou_threshold}")
    return kept
