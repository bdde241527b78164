"""
Box regression encodings and training-target assignment for both heads.

Outdoor head (anchor-based, bird's-eye view):
- Anchors on every BEV cell center for a set of rotations, at a constant height
- 7-tuple deltas with translation normalized by the anchor's BEV diagonal
- Direction bins disambiguating the sine-encoded yaw residual
- IoU-threshold assignment with a forced best anchor per ground truth

Indoor head (anchor-free, three scales):
- Locations at voxel strides 4, 2 and 1
- Center sampling limited to the 3x3x3 block around an object's center
- Six face offsets plus yaw, and a 3D centerness target

Offsets are measured in the box's yaw-aligned frame: x along the heading
(length l), y across it (width w), z up (height h). For boxes with zero yaw
this is the world-axis reading of min/max coordinates.
"""
import logging
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ValidationError
from src.core.geometry import Box3D, iou_matrix, normalize_angle
from src.core.voxelgrid import VoxelGridSpec

logger = logging.getLogger(__name__)

DEFAULT_ROTATIONS = (0.0, math.pi / 2)
LEVEL_STRIDES = (4, 2, 1)


@dataclass(frozen=True)
class Anchor:
    """
    BEV anchor box.

    Attributes:
        x, y (float): BEV location in meters
        z (float): Height of the anchor center, shared by an anchor set
        w, l, h (float): Prior extents in meters
        theta (float): Prior yaw, typically 0 or pi/2
    """

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if self.w <= 0 or self.l <= 0 or self.h <= 0:
            raise ValidationError(f"Anchor extents must be positive, got w={self.w}, l={self.l}, h={self.h}")

    @property
    def diagonal(self) -> float:
        """BEV diagonal ``d_a = sqrt(w^2 + l^2)``."""
        return math.sqrt(self.w ** 2 + self.l ** 2)

    def as_box(self) -> Box3D:
        return Box3D(self.x, self.y, self.z, self.w, self.h, self.l, self.theta)


@dataclass(frozen=True)
class BoxDelta7:
    """Regression target of the outdoor head."""

    dx: float
    dy: float
    dz: float
    dw: float
    dl: float
    dh: float
    dtheta: float

    def __post_init__(self):
        values = self.as_tuple()
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"Delta values must be finite, got {values}")
        if not -1.0 <= self.dtheta <= 1.0:
            raise ValidationError(f"dtheta must lie in [-1, 1], got {self.dtheta}")

    def as_tuple(self) -> Tuple[float, ...]:
        return (self.dx, self.dy, self.dz, self.dw, self.dl, self.dh, self.dtheta)


def generate_anchors(
    spec: VoxelGridSpec,
    prior: Tuple[float, float, float, float],
    rotations: Sequence[float] = DEFAULT_ROTATIONS
) -> List[Anchor]:
    """
    Place one anchor per BEV cell center per rotation.

    Args:
        spec: Grid whose (nx, ny) cells define anchor locations
        prior: (w, l, h, z) anchor extents and shared center height
        rotations: Anchor yaws

    Returns:
        nx * ny * len(rotations) anchors, ordered by ix, then iy, then rotation
    """
    w, l, h, z = prior
    if w <= 0 or l <= 0 or h <= 0:
        raise ValidationError(f"Anchor prior extents must be positive, got {prior}")
    xs = spec.x_min + (np.arange(spec.nx) + 0.5) * spec.s
    ys = spec.y_min + (np.arange(spec.ny) + 0.5) * spec.s
    return [
        Anchor(float(x), float(y), z, w, l, h, float(rot))
        for x in xs
        for y in ys
        for rot in rotations
    ]


def encode_outdoor(gt: Box3D, a: Anchor) -> BoxDelta7:
    """
    Encode a ground-truth box relative to an anchor.

    Examples:
        >>> a = Anchor(0.0, 0.0, -1.0, 1.6, 3.9, 1.56)
        >>> encode_outdoor(a.as_box(), a).as_tuple()
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    """
    da = a.diagonal
    return BoxDelta7(
        dx=(gt.x - a.x) / da,
        dy=(gt.y - a.y) / da,
        dz=(gt.z - a.z) / da,
        dw=math.log(gt.w / a.w),
        dl=math.log(gt.l / a.l),
        dh=math.log(gt.h / a.h),
        dtheta=math.sin(gt.theta - a.theta),
    )


def direction_target(gt_theta: float, anchor_theta: float) -> bool:
    """
    Direction bin for the yaw residual ``r = theta_gt - theta_a``.

    Positive iff ``wrap(r + pi/2)`` lies in [0, pi), i.e. the residual points
    into the anchor's front half-circle [-pi/2, pi/2). The sine encoding
    cannot tell ``r`` from ``pi - r``; this bit can.
    """
    shifted = (gt_theta - anchor_theta + math.pi / 2) % (2 * math.pi)
    return shifted < math.pi


def decode_outdoor(delta: BoxDelta7, a: Anchor, dir_positive: bool) -> Box3D:
    """
    Invert encode_outdoor.

    The yaw residual ``asin(dtheta)`` is kept when ``dir_positive`` and
    reflected to ``pi - asin(dtheta)`` otherwise.

    Raises:
        ValidationError: If the delta is not finite (raised by BoxDelta7)
    """
    if not isinstance(delta, BoxDelta7):
        delta = BoxDelta7(*delta)
    da = a.diagonal
    residual = math.asin(delta.dtheta)
    if not dir_positive:
        residual = math.pi - residual
    return Box3D(
        x=a.x + delta.dx * da,
        y=a.y + delta.dy * da,
        z=a.z + delta.dz * da,
        w=a.w * math.exp(delta.dw),
        h=a.h * math.exp(delta.dh),
        l=a.l * math.exp(delta.dl),
        theta=normalize_angle(a.theta + residual),
    )


class AssignState(IntEnum):
    IGNORED = -1
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True, eq=False)
class AnchorAssignment:
    """
    Per-anchor assignment.

    Attributes:
        states (np.ndarray): AssignState values, one per anchor
        gt_indices (np.ndarray): Assigned gt index for positives, -1 otherwise
        max_iou (np.ndarray): Best BEV IoU of each anchor over all gts
    """

    states: np.ndarray
    gt_indices: np.ndarray
    max_iou: np.ndarray

    def positives(self) -> List[Tuple[int, int]]:
        """(anchor index, gt index) pairs of positive anchors, by anchor index."""
        idx = np.flatnonzero(self.states == AssignState.POSITIVE)
        return [(int(i), int(self.gt_indices[i])) for i in idx]

    def counts(self) -> Dict[str, int]:
        return {
            "positive": int(np.count_nonzero(self.states == AssignState.POSITIVE)),
            "negative": int(np.count_nonzero(self.states == AssignState.NEGATIVE)),
            "ignored": int(np.count_nonzero(self.states == AssignState.IGNORED)),
        }


def assign_anchors(
    anchors: Sequence[Anchor],
    gts: Sequence[Box3D],
    pos_iou: float = 0.6,
    neg_iou: float = 0.45
) -> AnchorAssignment:
    """
    Label anchors positive, negative or ignored by rotated BEV IoU.

    An anchor is positive (to its argmax gt) when its best IoU is >= pos_iou,
    negative when below neg_iou, otherwise ignored. Then, in gt index order,
    each gt forces its best overlapping anchor positive to itself, skipping
    anchors already forced by a lower gt; a gt is left without a forced anchor
    only when every anchor it overlaps was taken that way. Ties in argmax
    resolve to the lowest index.

    Raises:
        ValidationError: Unless 0 <= neg_iou <= pos_iou <= 1
    """
    if not 0.0 <= neg_iou <= pos_iou <= 1.0:
        raise ValidationError(f"Need 0 <= neg_iou <= pos_iou <= 1, got neg={neg_iou}, pos={pos_iou}")
    n = len(anchors)
    states = np.full(n, AssignState.NEGATIVE, dtype=np.int8)
    gt_indices = np.full(n, -1, dtype=np.int64)
    if not gts or n == 0:
        return AnchorAssignment(states, gt_indices, np.zeros(n))

    ious = iou_matrix([a.as_box() for a in anchors], list(gts), kind="bev")
    best_gt = np.argmax(ious, axis=1)
    max_iou = ious[np.arange(n), best_gt]

    positive = max_iou >= pos_iou
    states[(max_iou >= neg_iou) & ~positive] = AssignState.IGNORED
    states[positive] = AssignState.POSITIVE
    gt_indices[positive] = best_gt[positive]

    forced = np.zeros(n, dtype=bool)
    for g in range(len(gts)):
        column = np.where(forced, 0.0, ious[:, g])
        a = int(np.argmax(column))
        if column[a] > 0:
            forced[a] = True
            states[a] = AssignState.POSITIVE
            gt_indices[a] = g
    return AnchorAssignment(states, gt_indices, max_iou)


@dataclass(frozen=True)
class FcosLocation:
    """A 3D location of the indoor head at scale ``level`` (0 = coarsest)."""

    x: float
    y: float
    z: float
    level: int

    def __post_init__(self):
        if self.level not in (0, 1, 2):
            raise ValidationError(f"Level must be 0, 1 or 2, got {self.level}")


@dataclass(frozen=True)
class FcosTarget:
    """
    Regression/classification target of one indoor-head location.

    The six offsets are distances from the location to the box's min and max
    planes (``dx_min = x - x_min``, ``dx_max = x_max - x``, measured in the box
    frame); all are non-negative for a location inside the box.
    """

    dx_min: float
    dx_max: float
    dy_min: float
    dy_max: float
    dz_min: float
    dz_max: float
    theta: float = 0.0
    centerness: float = 0.0
    class_id: int = -1
    is_positive: bool = False

    @classmethod
    def negative(cls) -> "FcosTarget":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def offsets(self) -> Tuple[float, float, float, float, float, float]:
        return (self.dx_min, self.dx_max, self.dy_min, self.dy_max, self.dz_min, self.dz_max)


def fcos_locations(spec: VoxelGridSpec) -> List[FcosLocation]:
    """
    Locations of the three indoor-head scales.

    Level 0 holds centers of stride-4 cells, level 1 of stride-2 cells and
    level 2 of the voxels themselves; within a level, ordering is ix, iy, iz.

    Raises:
        ValidationError: If a voxel count is not divisible by 4
    """
    if any(n % 4 for n in spec.shape):
        raise ValidationError(f"Grid {spec.shape} is not divisible by 4")
    locations = []
    for level, stride in enumerate(LEVEL_STRIDES):
        xs, ys, zs = _level_axes(spec, stride)
        locations.extend(
            FcosLocation(float(x), float(y), float(z), level)
            for x in xs for y in ys for z in zs
        )
    return locations


def _level_axes(spec: VoxelGridSpec, stride: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    edge = stride * spec.s
    return (
        spec.x_min + (np.arange(spec.nx // stride) + 0.5) * edge,
        spec.y_min + (np.arange(spec.ny // stride) + 0.5) * edge,
        spec.z_min + (np.arange(spec.nz // stride) + 0.5) * edge,
    )


def _nearest_block(axis: np.ndarray, c: float) -> np.ndarray:
    center = int(np.argmin(np.abs(axis - c)))
    return axis[max(center - 1, 0):center + 2]


def center_sampling(gt: Box3D, level_locations: Sequence[FcosLocation]) -> List[int]:
    """
    Candidate locations of a gt at one scale.

    Takes the 3x3x3 block of cells around the cell nearest the gt center
    (ties to the lower index; clipped at grid borders) and keeps the locations
    lying inside the gt box.

    Args:
        gt: Ground-truth box
        level_locations: Locations of a single level, as from fcos_locations

    Returns:
        Indices into ``level_locations`` (at most 27), ascending
    """
    if not level_locations:
        return []
    coords = np.array([[p.x, p.y, p.z] for p in level_locations])
    blocks = [
        _nearest_block(np.unique(coords[:, axis]), c)
        for axis, c in enumerate((gt.x, gt.y, gt.z))
    ]
    in_block = np.ones(len(coords), dtype=bool)
    for axis, block in enumerate(blocks):
        in_block &= np.isin(coords[:, axis], block)
    inside = gt.contains(coords[:, 0], coords[:, 1], coords[:, 2])
    return [int(i) for i in np.flatnonzero(in_block & inside)]


def centerness3d(offsets: Sequence[float]) -> float:
    """
    3D centerness of six face offsets.

    ``sqrt(min(x)/max(x) * min(y)/max(y) * min(z)/max(z))`` over the three
    (min, max) offset pairs; 1 at the center, 0 on any face.

    Raises:
        ValidationError: On a negative offset or a wrong count

    Examples:
        >>> round(centerness3d((1, 3, 2, 2, 1, 1)), 4)
        0.5774
    """
    if len(offsets) != 6:
        raise ValidationError(f"centerness3d needs 6 offsets, got {len(offsets)}")
    if any(o < 0 for o in offsets):
        raise ValidationError(f"Offsets must be non-negative, got {tuple(offsets)}")
    product = 1.0
    for lo, hi in zip(offsets[0::2], offsets[1::2]):
        largest = max(lo, hi)
        if largest == 0:
            return 0.0
        product *= min(lo, hi) / largest
    return math.sqrt(product)


def encode_fcos(gt: Box3D, loc: FcosLocation, class_id: int = 0, rotation_free: bool = False) -> FcosTarget:
    """
    Face offsets of ``gt`` as seen from ``loc``.

    Offsets are signed: a location outside the box gets a negative offset on
    that side, a centerness of 0 and ``is_positive`` False. With
    ``rotation_free`` the box yaw is ignored and the target yaw is 0.
    """
    box = gt if not rotation_free else replace(gt, theta=0.0)
    lx, ly, lz = box.to_local(loc.x, loc.y, loc.z)
    hl, hw, hh = 0.5 * box.l, 0.5 * box.w, 0.5 * box.h
    offsets = (lx + hl, hl - lx, ly + hw, hw - ly, lz + hh, hh - lz)
    inside = min(offsets) >= 0
    centerness = centerness3d(offsets) if inside else 0.0
    return FcosTarget(*offsets, theta=box.theta, centerness=centerness, class_id=class_id, is_positive=inside)


def decode_fcos(pred: FcosTarget, loc: FcosLocation, rotation_free: bool = False) -> Box3D:
    """
    Rebuild a box from six face offsets and yaw.

    Raises:
        ValidationError: If an implied extent is not positive
    """
    l = pred.dx_min + pred.dx_max
    w = pred.dy_min + pred.dy_max
    h = pred.dz_min + pred.dz_max
    if l <= 0 or w <= 0 or h <= 0:
        raise ValidationError(f"Offsets imply non-positive extents l={l}, w={w}, h={h}")
    theta = 0.0 if rotation_free else pred.theta
    ox = 0.5 * (pred.dx_max - pred.dx_min)
    oy = 0.5 * (pred.dy_max - pred.dy_min)
    oz = 0.5 * (pred.dz_max - pred.dz_min)
    c, s = math.cos(theta), math.sin(theta)
    return Box3D(loc.x + (c * ox - s * oy), loc.y + (s * ox + c * oy), loc.z + oz, w, h, l, theta)


def route_level(gt: Box3D, spec: VoxelGridSpec) -> int:
    """
    Scale that trains a gt: the coarsest level whose cell edge is at most
    half the gt's smallest extent, falling back to the finest level.
    """
    half_extent = 0.5 * min(gt.w, gt.l, gt.h)
    for level, stride in enumerate(LEVEL_STRIDES):
        if stride * spec.s <= half_extent:
            return level
    return len(LEVEL_STRIDES) - 1


def assign_fcos(
    gts: Sequence[Box3D],
    locations: Sequence[FcosLocation],
    spec: VoxelGridSpec,
    class_ids: Optional[Sequence[int]] = None,
    rotation_free: bool = False
) -> List[FcosTarget]:
    """
    Build one target per location.

    A location is positive iff it is a center-sampling candidate of some gt at
    the gt's routed level. A location claimed by several gts goes to the gt
    with the smallest volume (lower index on ties).

    Returns:
        Targets aligned with ``locations``; negatives come from FcosTarget.negative()
    """
    if class_ids is None:
        class_ids = [0] * len(gts)
    if len(class_ids) != len(gts):
        raise ValidationError(f"{len(class_ids)} class ids for {len(gts)} gts")
    by_level: Dict[int, List[int]] = {0: [], 1: [], 2: []}
    for i, loc in enumerate(locations):
        by_level[loc.level].append(i)

    owner: Dict[int, int] = {}
    for g, gt in enumerate(gts):
        if rotation_free:
            gt = replace(gt, theta=0.0)
        level = route_level(gt, spec)
        indices = by_level[level]
        candidates = center_sampling(gt, [locations[i] for i in indices])
        for c in candidates:
            loc_index = indices[c]
            current = owner.get(loc_index)
            if current is None or gt.volume < gts[current].volume:
                owner[loc_index] = g

    targets = [FcosTarget.negative()] * len(locations)
    for loc_index, g in owner.items():
        targets[loc_index] = encode_fcos(gts[g], locations[loc_index], class_ids[g], rotation_free)
    logger.debug(f"assign_fcos: {len(owner)} positive locations for {len(gts)} gts")
    return targets
