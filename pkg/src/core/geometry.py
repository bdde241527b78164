"""
Camera projection, oriented-box geometry and rotated IoU.

This module is the mathematical substrate shared by the voxel projection,
the target codecs, suppression and evaluation. It provides:

- Pinhole camera types (intrinsics, world-to-camera extrinsics) and point projection
- The oriented 3D box type and its corner / footprint polygons
- Convex polygon clipping (Sutherland-Hodgman) and intersection area
- Rotated 3D IoU and bird's-eye-view IoU

Conventions:
    World frame is right-handed with z up and x forward. A Box3D stores its
    geometric center, extents (w along the local y axis, h along z, l along the
    local heading axis, i.e. world x when theta = 0) and a yaw theta in (-pi, pi].

All functions are pure and hold no global state.
"""
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from src.core.errors import ValidationError

TWO_PI = 2.0 * math.pi

Point2 = Tuple[float, float]
ArrayOrFloat = Union[float, np.ndarray]


def normalize_angle(theta: float) -> float:
    """
    Reduce an angle to the half-open interval (-pi, pi].

    Angles already inside the interval are returned unchanged (bitwise).

    Raises:
        ValidationError: If theta is not finite
    """
    if not math.isfinite(theta):
        raise ValidationError(f"Angle must be finite, got {theta}")
    if -math.pi < theta <= math.pi:
        return float(theta)
    reduced = math.remainder(theta, TWO_PI)
    if reduced <= -math.pi:
        reduced += TWO_PI
    return reduced


@dataclass(frozen=True)
class CameraIntrinsics:
    """
    Pinhole intrinsics (the matrix K).

    Attributes:
        fx (float): Horizontal focal length in pixels
        fy (float): Vertical focal length in pixels
        cx (float): Principal point x in pixels
        cy (float): Principal point y in pixels
    """

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        values = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"Intrinsics must be finite, got {values}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, k: np.ndarray) -> "CameraIntrinsics":
        k = np.asarray(k, dtype=float)
        return cls(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]))


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """
    World-to-camera rigid transform (the matrix R_t).

    A world point p maps to camera coordinates ``rotation @ p + translation``.
    The camera looks along its +z axis with +x right and +y down.

    Attributes:
        rotation (np.ndarray): 3x3 orthonormal matrix with determinant +1
        translation (np.ndarray): 3-vector in meters
    """

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=float)
        translation = np.array(self.translation, dtype=float).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValidationError(
                f"Extrinsics need a 3x3 rotation and a 3-vector translation, "
                f"got {rotation.shape} and {translation.shape}"
            )
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise ValidationError("Extrinsics must be finite")
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-6, rtol=0.0):
            raise ValidationError("Extrinsic rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-6:
            raise ValidationError("Extrinsic rotation must have determinant +1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "CameraExtrinsics":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        """3x4 matrix [R | t]."""
        return np.hstack([self.rotation, self.translation.reshape(3, 1)])

    @property
    def camera_center(self) -> np.ndarray:
        """Camera optical center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Box3D:
    """
    Oriented 3D bounding box (x, y, z, w, h, l, theta).

    Attributes:
        x, y, z (float): Geometric center in meters (world frame, z up)
        w (float): Width along the local y axis
        h (float): Height along z
        l (float): Length along the local heading axis
        theta (float): Yaw around z in radians, normalized to (-pi, pi]

    Example:
        >>> Box3D(0.0, 0.0, 0.0, 1.0, 1.0, 2.0, math.pi / 2).theta
        1.5707963267948966
    """

    x: float
    y: float
    z: float
    w: float
    h: float
    l: float
    theta: float = 0.0

    def __post_init__(self):
        values = (self.x, self.y, self.z, self.w, self.h, self.l, self.theta)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"Box3D values must be finite, got {values}")
        if self.w <= 0 or self.h <= 0 or self.l <= 0:
            raise ValidationError(f"Box3D extents must be positive, got w={self.w}, h={self.h}, l={self.l}")
        for name in ("x", "y", "z", "w", "h", "l"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box3D":
        if len(values) != 7:
            raise ValidationError(f"Box3D needs 7 values, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w, self.h, self.l, self.theta])

    def as_list(self) -> List[float]:
        return [self.x, self.y, self.z, self.w, self.h, self.l, self.theta]

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self) -> float:
        return self.w * self.h * self.l

    @property
    def bev_area(self) -> float:
        return self.w * self.l

    @property
    def bev_radius(self) -> float:
        """Radius of the footprint's circumscribed circle."""
        return 0.5 * math.hypot(self.w, self.l)

    @property
    def z_min(self) -> float:
        return self.z - 0.5 * self.h

    @property
    def z_max(self) -> float:
        return self.z + 0.5 * self.h

    def translated(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> "Box3D":
        return Box3D(self.x + dx, self.y + dy, self.z + dz, self.w, self.h, self.l, self.theta)

    def to_local(self, x: ArrayOrFloat, y: ArrayOrFloat, z: ArrayOrFloat):
        """Express world points in the box frame (origin at center, x along heading)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = x - self.x
        dy = y - self.y
        return c * dx + s * dy, -s * dx + c * dy, z - self.z

    def contains(self, x: ArrayOrFloat, y: ArrayOrFloat, z: ArrayOrFloat):
        """Closed-set membership test; works on scalars and numpy arrays."""
        lx, ly, lz = self.to_local(x, y, z)
        inside = (abs(lx) <= 0.5 * self.l) & (abs(ly) <= 0.5 * self.w) & (abs(lz) <= 0.5 * self.h)
        return inside


def transform_box(b: Box3D, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> Box3D:
    """Apply a rigid transform (rotation about the world z axis, then translation) to a box."""
    c, s = math.cos(yaw), math.sin(yaw)
    x = c * b.x - s * b.y + translation[0]
    y = s * b.x + c * b.y + translation[1]
    return Box3D(x, y, b.z + translation[2], b.w, b.h, b.l, b.theta + yaw)


@dataclass(frozen=True)
class Polygon2D:
    """
    Convex polygon with counter-clockwise vertices.

    Clockwise input is reversed on construction. Non-convex or degenerate
    (fewer than 3 vertices) input is rejected.
    """

    vertices: Tuple[Point2, ...]

    def __post_init__(self):
        verts = tuple((float(p[0]), float(p[1])) for p in self.vertices)
        if len(verts) < 3:
            raise ValidationError(f"Polygon needs at least 3 vertices, got {len(verts)}")
        if signed_area(verts) < 0:
            verts = tuple(reversed(verts))
        if not _is_convex(verts):
            raise ValidationError("Polygon is not convex")
        object.__setattr__(self, "vertices", verts)

    @property
    def area(self) -> float:
        return abs(signed_area(self.vertices))


def signed_area(vertices: Sequence[Point2]) -> float:
    """Shoelace formula; positive for counter-clockwise order."""
    n = len(vertices)
    if n < 3:
        return 0.0
    total = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def _is_convex(vertices: Sequence[Point2]) -> bool:
    n = len(vertices)
    for i in range(n):
        ax, ay = vertices[i]
        bx, by = vertices[(i + 1) % n]
        cx, cy = vertices[(i + 2) % n]
        cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
        scale = max(abs(bx - ax) + abs(by - ay), 1.0) * max(abs(cx - bx) + abs(cy - by), 1.0)
        if cross < -1e-12 * scale:
            return False
    return True


def project_point(
    k: CameraIntrinsics,
    rt: CameraExtrinsics,
    p: Sequence[float],
    stride: int = 1
) -> Tuple[float, float, float]:
    """
    Project a world point onto a feature map of the given stride.

    Implements ``[u v]^T = Pi * diag(1/stride, 1/stride, 1) * K * R_t * [x y z 1]^T``.

    Args:
        k: Camera intrinsics
        rt: World-to-camera extrinsics
        p: World point (x, y, z) in meters
        stride: Feature-map downscale factor relative to pixels (>= 1)

    Returns:
        (u, v, depth): Feature-map coordinates and camera-frame depth. The sign of
        depth is preserved; a depth of exactly 0 yields NaN coordinates.

    Raises:
        ValidationError: If stride is not a positive integer

    Examples:
        >>> k = CameraIntrinsics(2.0, 2.0, 3.0, 3.0)
        >>> project_point(k, CameraExtrinsics.identity(), (1.0, 1.0, 2.0), stride=4)
        (1.0, 1.0, 2.0)
    """
    _check_stride(stride)
    xc, yc, zc = camera_coordinates(rt, float(p[0]), float(p[1]), float(p[2]))
    if zc == 0:
        return math.nan, math.nan, 0.0
    u, v = pixel_coordinates(k, xc, yc, zc, stride)
    return float(u), float(v), float(zc)


def project_points(
    k: CameraIntrinsics,
    rt: CameraExtrinsics,
    xs: np.ndarray,
    ys: np.ndarray,
    zs: np.ndarray,
    stride: int = 1
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorized project_point.

    Uses the same elementwise operation order as the scalar version, so results
    are bitwise identical to calling project_point on each point.
    """
    _check_stride(stride)
    xc, yc, zc = camera_coordinates(rt, xs, ys, zs)
    with np.errstate(divide="ignore", invalid="ignore"):
        u, v = pixel_coordinates(k, xc, yc, zc, stride)
    degenerate = zc == 0
    u = np.where(degenerate, np.nan, u)
    v = np.where(degenerate, np.nan, v)
    return u, v, np.where(degenerate, 0.0, zc)


def camera_coordinates(rt: CameraExtrinsics, x: ArrayOrFloat, y: ArrayOrFloat, z: ArrayOrFloat):
    r = rt.rotation
    t = rt.translation
    xc = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0]
    yc = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1]
    zc = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]
    return xc, yc, zc


def pixel_coordinates(k: CameraIntrinsics, xc: ArrayOrFloat, yc: ArrayOrFloat, zc: ArrayOrFloat, stride: int):
    u = (k.fx * xc + k.cx * zc) / zc / stride
    v = (k.fy * yc + k.cy * zc) / zc / stride
    return u, v


def _check_stride(stride: int) -> None:
    if isinstance(stride, bool) or not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValidationError(f"Stride must be a positive integer, got {stride!r}")


def look_at(
    eye: Sequence[float],
    target: Sequence[float],
    up: Sequence[float] = (0.0, 0.0, 1.0)
) -> CameraExtrinsics:
    """
    Build world-to-camera extrinsics for a camera at ``eye`` looking at ``target``.

    The camera +z axis points at the target, +x points right and +y points down
    with respect to the ``up`` direction.

    Raises:
        ValidationError: If eye equals target or the view direction is parallel to up
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValidationError("look_at: eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=float))
    right_norm = np.linalg.norm(right)
    if right_norm < 1e-9:
        raise ValidationError("look_at: view direction is parallel to the up vector")
    right = right / right_norm
    down = np.cross(forward, right)
    rotation = np.vstack([right, down, forward])
    return CameraExtrinsics(rotation, -rotation @ eye)


def camera_pitch_roll(rt: CameraExtrinsics) -> Tuple[float, float]:
    """
    Pitch and roll of a camera with respect to the world z axis.

    Pitch is positive when the optical axis points above the horizon; roll is
    the rotation about the optical axis, zero for a camera whose x axis is level.
    Yaw is discarded.
    """
    right, down, forward = rt.rotation
    pitch = math.asin(max(-1.0, min(1.0, float(forward[2]))))
    roll = math.atan2(-float(right[2]), -float(down[2]))
    return pitch, roll


def box_corners(b: Box3D) -> np.ndarray:
    """
    Corners of an oriented box as an (8, 3) array.

    Ordering: indices 0-3 are the bottom face and 4-7 the top face. Within a
    face, corners run counter-clockwise seen from above, starting at local
    (+l/2, +w/2), then (-l/2, +w/2), (-l/2, -w/2), (+l/2, -w/2).
    """
    hl, hw, hh = 0.5 * b.l, 0.5 * b.w, 0.5 * b.h
    local = np.array([
        [hl, hw, -hh], [-hl, hw, -hh], [-hl, -hw, -hh], [hl, -hw, -hh],
        [hl, hw, hh], [-hl, hw, hh], [-hl, -hw, hh], [hl, -hw, hh],
    ])
    c, s = math.cos(b.theta), math.sin(b.theta)
    corners = np.empty_like(local)
    corners[:, 0] = b.x + (c * local[:, 0] - s * local[:, 1])
    corners[:, 1] = b.y + (s * local[:, 0] + c * local[:, 1])
    corners[:, 2] = b.z + local[:, 2]
    return corners


def bev_polygon(b: Box3D) -> Polygon2D:
    """Counter-clockwise 4-vertex footprint of a box in the world xy-plane."""
    corners = box_corners(b)[:4, :2]
    return Polygon2D(tuple((float(x), float(y)) for x, y in corners))


def clip_polygon(subject: Sequence[Point2], clip: Sequence[Point2]) -> List[Point2]:
    """
    Sutherland-Hodgman clipping of ``subject`` by the convex counter-clockwise ``clip``.

    Points on a clip edge count as inside, so coincident polygons clip to themselves.
    Returns an empty list when the result is empty.
    """
    output = list(subject)
    c1 = clip[-1]
    for c2 in clip:
        if not output:
            return []
        ex, ey = c2[0] - c1[0], c2[1] - c1[1]
        inputs = output
        output = []
        s = inputs[-1]
        ds = ex * (s[1] - c1[1]) - ey * (s[0] - c1[0])
        for e in inputs:
            de = ex * (e[1] - c1[1]) - ey * (e[0] - c1[0])
            if de >= 0:
                if ds < 0:
                    output.append(_edge_crossing(s, e, ds, de))
                output.append(e)
            elif ds >= 0:
                output.append(_edge_crossing(s, e, ds, de))
            s, ds = e, de
        c1 = c2
    return output


def _edge_crossing(s: Point2, e: Point2, ds: float, de: float) -> Point2:
    t = ds / (ds - de)
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


def convex_intersection_area(a: Polygon2D, b: Polygon2D) -> float:
    """
    Area of the intersection of two convex polygons.

    Touching polygons (shared edge or vertex) have zero intersection area.

    Examples:
        >>> sq = Polygon2D(((0, 0), (1, 0), (1, 1), (0, 1)))
        >>> convex_intersection_area(sq, Polygon2D(((0.5, 0), (1.5, 0), (1.5, 1), (0.5, 1))))
        0.5
    """
    clipped = clip_polygon(a.vertices, b.vertices)
    if len(clipped) < 3:
        return 0.0
    return min(abs(signed_area(clipped)), a.area, b.area)


def z_overlap(a: Box3D, b: Box3D) -> float:
    return max(0.0, min(a.z_max, b.z_max) - max(a.z_min, b.z_min))


def _footprints_may_overlap(a: Box3D, b: Box3D) -> bool:
    return math.hypot(a.x - b.x, a.y - b.y) < a.bev_radius + b.bev_radius


def iou3d(a: Box3D, b: Box3D) -> float:
    """
    Rotated 3D IoU.

    Intersection is the footprint intersection area times the vertical overlap;
    the union is the true volume union ``vol_a + vol_b - intersection``.

    Returns:
        float: IoU in [0, 1]
    """
    dz = z_overlap(a, b)
    if dz <= 0 or not _footprints_may_overlap(a, b):
        return 0.0
    inter = convex_intersection_area(bev_polygon(a), bev_polygon(b)) * dz
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return max(0.0, min(1.0, inter / union))


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Rotated IoU of the ground-plane footprints."""
    if not _footprints_may_overlap(a, b):
        return 0.0
    inter = convex_intersection_area(bev_polygon(a), bev_polygon(b))
    union = a.bev_area + b.bev_area - inter
    if union <= 0:
        return 0.0
    return max(0.0, min(1.0, inter / union))


def aligned_extent_iou(a: Box3D, b: Box3D) -> float:
    """3D IoU of two boxes after moving them to a common center and yaw."""
    inter = min(a.w, b.w) * min(a.h, b.h) * min(a.l, b.l)
    return inter / (a.volume + b.volume - inter)


def iou_matrix(boxes_a: Sequence[Box3D], boxes_b: Sequence[Box3D], kind: str = "3d") -> np.ndarray:
    """
    Pairwise IoU matrix of shape (len(boxes_a), len(boxes_b)).

    Pairs whose footprint circles cannot touch are skipped without clipping.

    Args:
        kind: "3d" for rotated 3D IoU, "bev" for footprint IoU
    """
    if kind not in ("3d", "bev"):
        raise ValidationError(f"Unknown IoU kind '{kind}'")
    result = np.zeros((len(boxes_a), len(boxes_b)))
    if not len(boxes_a) or not len(boxes_b):
        return result
    fn = iou3d if kind == "3d" else iou_bev
    centers_a = np.array([[b.x, b.y] for b in boxes_a])
    centers_b = np.array([[b.x, b.y] for b in boxes_b])
    radii_a = np.array([b.bev_radius for b in boxes_a])
    radii_b = np.array([b.bev_radius for b in boxes_b])
    dist = np.linalg.norm(centers_a[:, None, :] - centers_b[None, :, :], axis=2)
    candidates = np.argwhere(dist < radii_a[:, None] + radii_b[None, :])
    for i, j in candidates:
        result[i, j] = fn(boxes_a[i], boxes_b[j])
    return result


def boxes_from_arrays(rows: Iterable[Sequence[float]]) -> List[Box3D]:
    return [Box3D.from_array(r) for r in rows]
