"""
KITTI object-detection calibration and label files.

Text formats follow the KITTI devkit:

- calib: one ``KEY: v0 v1 ...`` line per matrix, row-major. P2 (3x4) is required;
  R0_rect (3x3) and Tr_velo_to_cam (3x4) default to identity when absent.
  Other keys (P0, P1, P3, Tr_imu_to_velo) are skipped.
- label: one object per line, 15 whitespace-separated fields, plus a 16th
  score field in result files.

Frame conversion: KITTI labels live in the rectified reference camera frame
(x right, y down, z forward) with the location at the bottom-center of the
box. Boxes are converted into a world frame centered on the left color camera
(camera 2) with x forward, y left, z up::

    p = location + K^-1 * P2[:, 3]          (shift onto camera 2)
    x, y, z = p_z, -p_x, -(p_y - h / 2)     (lift to the geometric center)
    theta = -rotation_y - pi / 2

``calib_camera`` returns the matching intrinsics and extrinsics for P2.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.core.errors import ParseError, ValidationError
from src.core.evaluation import GroundTruthObject, kitti_difficulty_filter
from src.core.geometry import Box3D, CameraExtrinsics, CameraIntrinsics, normalize_angle

logger = logging.getLogger(__name__)

DONT_CARE = "DontCare"

CALIB_SHAPES = {
    "P2": (3, 4),
    "R0_rect": (3, 3),
    "Tr_velo_to_cam": (3, 4),
}

# camera (x right, y down, z forward) -> world (x forward, y left, z up)
CAMERA_TO_WORLD = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


@dataclass(frozen=True, eq=False)
class KittiCalib:
    """
    Calibration of one KITTI frame.

    Attributes:
        p2 (np.ndarray): 3x4 projection matrix of the left color camera
        r0_rect (np.ndarray): 3x3 rectifying rotation
        tr_velo_to_cam (np.ndarray): 3x4 LiDAR-to-camera transform
    """

    p2: np.ndarray
    r0_rect: np.ndarray = field(default_factory=lambda: np.eye(3))
    tr_velo_to_cam: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(3), np.zeros((3, 1))]))

    def __post_init__(self):
        for name, shape in (("p2", (3, 4)), ("r0_rect", (3, 3)), ("tr_velo_to_cam", (3, 4))):
            matrix = np.array(getattr(self, name), dtype=float)
            if matrix.shape != shape:
                raise ValidationError(f"{name} must have shape {shape}, got {matrix.shape}")
            if not np.all(np.isfinite(matrix)):
                raise ValidationError(f"{name} must be finite")
            matrix.setflags(write=False)
            object.__setattr__(self, name, matrix)
        k = self.p2[:, :3]
        with np.errstate(all="ignore"):
            det = np.linalg.det(k)
            scale = max(1.0, float(np.abs(k).max())) ** 3
        if not math.isfinite(det) or abs(det) < 1e-12 * scale:
            raise ValidationError("Upper-left 3x3 of P2 is singular")

    @property
    def camera_offset(self) -> np.ndarray:
        """Position shift from the reference camera to camera 2, ``K^-1 * P2[:, 3]``."""
        return np.linalg.solve(self.p2[:, :3], self.p2[:, 3])


@dataclass(frozen=True)
class KittiLabel:
    """
    One row of a KITTI label file.

    Attributes:
        type (str): Class name, e.g. "Car"; "DontCare" marks regions to ignore
        truncated (float): Truncation in [0, 1] (-1 for DontCare)
        occluded (int): 0 visible, 1 partly, 2 largely occluded, 3 unknown (-1 for DontCare)
        alpha (float): Observation angle in radians
        bbox (tuple): 2D box (left, top, right, bottom) in pixels
        h, w, l (float): Extents in meters
        location (tuple): Bottom-center (x, y, z) in the camera frame
        rotation_y (float): Yaw around the camera y axis in radians
        score (float): Detection confidence, None for ground truth
    """

    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: Tuple[float, float, float, float]
    h: float
    w: float
    l: float
    location: Tuple[float, float, float]
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dont_care(self) -> bool:
        return self.type == DONT_CARE

    @property
    def bbox_height(self) -> float:
        return self.bbox[3] - self.bbox[1]


def _float(token: str, source: str, line: int, name: str) -> float:
    try:
        value = float(token)
    except (ValueError, OverflowError):
        raise ParseError(f"'{token}' is not a number", source, line, name) from None
    if not math.isfinite(value):
        raise ParseError(f"'{token}' is not finite", source, line, name)
    return value


def parse_kitti_calib(text: str, source: str = "<calib>") -> KittiCalib:
    """
    Parse a calibration file.

    Raises:
        ParseError: On a missing P2, malformed number, wrong arity or singular P2
    """
    matrices = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep:
            raise ParseError("expected 'KEY: values'", source, number)
        if key not in CALIB_SHAPES:
            logger.debug(f"{source}: skipping calibration key '{key}'")
            continue
        shape = CALIB_SHAPES[key]
        tokens = rest.split()
        if len(tokens) != shape[0] * shape[1]:
            raise ParseError(f"expected {shape[0] * shape[1]} values, got {len(tokens)}", source, number, key)
        values = [_float(t, source, number, key) for t in tokens]
        matrices[key] = np.array(values).reshape(shape)
    if "P2" not in matrices:
        raise ParseError("missing P2", source)
    kwargs = {"p2": matrices["P2"]}
    if "R0_rect" in matrices:
        kwargs["r0_rect"] = matrices["R0_rect"]
    if "Tr_velo_to_cam" in matrices:
        kwargs["tr_velo_to_cam"] = matrices["Tr_velo_to_cam"]
    try:
        return KittiCalib(**kwargs)
    except ValidationError as e:
        raise ParseError(str(e), source) from None


def _format_values(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def serialize_kitti_calib(calib: KittiCalib) -> str:
    """Write P2, R0_rect and Tr_velo_to_cam with shortest round-trip floats."""
    return (
        f"P2: {_format_values(calib.p2)}\n"
        f"R0_rect: {_format_values(calib.r0_rect)}\n"
        f"Tr_velo_to_cam: {_format_values(calib.tr_velo_to_cam)}\n"
    )


def _parse_label_line(tokens: List[str], source: str, number: int) -> KittiLabel:
    if len(tokens) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, got {len(tokens)}", source, number)
    name = tokens[0]
    values = [_float(t, source, number, f"field {i + 1}") for i, t in enumerate(tokens[1:], start=1)]
    truncated, occluded_raw, alpha = values[0], values[1], values[2]
    if occluded_raw != int(occluded_raw):
        raise ParseError(f"occlusion must be an integer, got {tokens[2]}", source, number, "occluded")
    occluded = int(occluded_raw)
    h, w, l = values[7], values[8], values[9]
    if name != DONT_CARE:
        if not 0.0 <= truncated <= 1.0:
            raise ParseError(f"truncation must lie in [0, 1], got {truncated}", source, number, "truncated")
        if occluded not in (0, 1, 2, 3):
            raise ParseError(f"occlusion must be 0-3, got {occluded}", source, number, "occluded")
        if h <= 0 or w <= 0 or l <= 0:
            raise ParseError(f"extents must be positive, got h={h}, w={w}, l={l}", source, number, "dimensions")
    score = values[14] if len(values) == 15 else None
    return KittiLabel(
        type=name,
        truncated=truncated,
        occluded=occluded,
        alpha=alpha,
        bbox=tuple(values[3:7]),
        h=h,
        w=w,
        l=l,
        location=tuple(values[10:13]),
        rotation_y=values[13],
        score=score,
    )


def parse_kitti_label(text: str, source: str = "<label>") -> List[KittiLabel]:
    """
    Parse a label (or result) file; blank lines are skipped.

    Raises:
        ParseError: On a wrong field count, unparseable number or invalid value
    """
    labels = []
    for number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if tokens:
            labels.append(_parse_label_line(tokens, source, number))
    return labels


def serialize_kitti_label(labels: List[KittiLabel]) -> str:
    """Write labels back in devkit field order, appending the score when present."""
    lines = []
    for label in labels:
        fields = [
            label.type,
            repr(float(label.truncated)),
            str(label.occluded),
            repr(float(label.alpha)),
            *(repr(float(v)) for v in label.bbox),
            repr(float(label.h)),
            repr(float(label.w)),
            repr(float(label.l)),
            *(repr(float(v)) for v in label.location),
            repr(float(label.rotation_y)),
        ]
        if label.score is not None:
            fields.append(repr(float(label.score)))
        lines.append(" ".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


def calib_camera(calib: KittiCalib) -> Tuple[CameraIntrinsics, CameraExtrinsics]:
    """
    Intrinsics and world-to-camera extrinsics of camera 2.

    K is the upper-left 3x3 of P2. P2's fourth column is folded into the
    camera-2-centered world frame, so the extrinsic translation is zero.
    """
    intrinsics = CameraIntrinsics.from_matrix(calib.p2[:, :3])
    return intrinsics, CameraExtrinsics(CAMERA_TO_WORLD.T.copy(), np.zeros(3))


def kitti_to_box3d(label: KittiLabel, calib: KittiCalib) -> Box3D:
    """
    Convert a label into a world-frame Box3D (see module docstring).

    Raises:
        ValidationError: For DontCare rows, which carry no 3D box
    """
    if label.is_dont_care:
        raise ValidationError("DontCare labels have no 3D box")
    p = np.asarray(label.location, dtype=float) + calib.camera_offset
    p[1] -= 0.5 * label.h
    x, y, z = CAMERA_TO_WORLD @ p
    return Box3D(float(x), float(y), float(z), label.w, label.h, label.l, -label.rotation_y - math.pi / 2)


def box3d_to_kitti(
    box: Box3D,
    calib: KittiCalib,
    type: str = "Car",  # pylint: disable=redefined-builtin
    score: Optional[float] = None
) -> KittiLabel:
    """
    Inverse of kitti_to_box3d. The 2D box, alpha, truncation and occlusion
    are not derivable from a 3D box and are written as zeros.
    """
    p = CAMERA_TO_WORLD.T @ box.center
    p[1] += 0.5 * box.h
    p -= calib.camera_offset
    return KittiLabel(
        type=type,
        truncated=0.0,
        occluded=0,
        alpha=0.0,
        bbox=(0.0, 0.0, 0.0, 0.0),
        h=box.h,
        w=box.w,
        l=box.l,
        location=(float(p[0]), float(p[1]), float(p[2])),
        rotation_y=normalize_angle(-box.theta - math.pi / 2),
        score=score,
    )


def labels_to_ground_truth(
    labels: List[KittiLabel],
    calib: KittiCalib,
    class_names: Tuple[str, ...] = ("Car",)
) -> List[GroundTruthObject]:
    """
    Ground-truth objects of the requested classes, tagged with KITTI difficulty.

    DontCare rows have no 3D box and are dropped; objects failing every
    difficulty level come back ignore-flagged.
    """
    objects = []
    for label in labels:
        if label.is_dont_care:
            continue
        if label.type not in class_names:
            logger.debug(f"Skipping label of class '{label.type}'")
            continue
        gt = GroundTruthObject(kitti_to_box3d(label, calib), class_names.index(label.type))
        objects.append(kitti_difficulty_filter(gt, label.bbox_height, label.truncated, label.occluded))
    return objects
