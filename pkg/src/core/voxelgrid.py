"""
Voxel volume construction from posed 2D feature maps.

Each posed view is projected into the voxel grid: every voxel center is
mapped through the camera, voxels landing inside the feature map with
positive depth are marked visible and copy the feature vector of the cell
they land in. Per-view volumes are then averaged over the views that see
each voxel. The module covers:

- Grid specification and voxel-count derivation from axis limits
- Per-view projection with frustum masks (nearest or bilinear sampling)
- Order-independent multi-view aggregation
- The binary volume container (see docs/file_formats.md)

Storage layout: ``data`` has shape (nx, ny, nz, channels) and ``mask`` has
shape (nx, ny, nz), both C-ordered, so iz varies fastest and channels are
innermost.
"""
import hashlib
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import ParseError, ValidationError
from src.core.geometry import CameraExtrinsics, CameraIntrinsics, project_points

logger = logging.getLogger(__name__)

SAMPLING_MODES = ("nearest", "bilinear")

VOLUME_MAGIC = b"VXVL"
VOLUME_VERSION = 1
_HEADER = struct.Struct("<4sIIIII6dd")

Limits = Tuple[float, float, float, float, float, float]


def derive_counts(limits: Sequence[float], s: float) -> Tuple[int, int, int]:
    """
    Derive voxel counts satisfying ``N * s = max - min`` on every axis.

    Args:
        limits: (x_min, x_max, y_min, y_max, z_min, z_max) in meters
        s: Voxel edge in meters

    Returns:
        (nx, ny, nz)

    Raises:
        ValidationError: If limits are unordered, s is not positive, or an axis
            range is not an integer multiple of s (tolerance 1e-6 * s)

    Examples:
        >>> derive_counts((-39.68, 39.68, 0.0, 69.12, -2.92, 0.92), 0.32)
        (248, 216, 12)
    """
    if len(limits) != 6:
        raise ValidationError(f"Expected 6 axis limits, got {len(limits)}")
    if not (math.isfinite(s) and s > 0):
        raise ValidationError(f"Voxel size must be positive, got {s}")
    counts = []
    for axis, (lo, hi) in zip("xyz", (limits[0:2], limits[2:4], limits[4:6])):
        extent = hi - lo
        if not (math.isfinite(lo) and math.isfinite(hi)) or extent <= 0:
            raise ValidationError(f"Axis {axis} limits must be finite and ordered, got [{lo}, {hi}]")
        n = int(round(extent / s))
        if n < 1 or abs(n * s - extent) > 1e-6 * s:
            raise ValidationError(f"Axis {axis} range {extent} is not an integer multiple of voxel size {s}")
        counts.append(n)
    return counts[0], counts[1], counts[2]


@dataclass(frozen=True)
class VoxelGridSpec:
    """
    Axis-aligned voxel grid over a bounded region.

    Attributes:
        x_min, x_max, y_min, y_max, z_min, z_max (float): Axis limits in meters
        s (float): Voxel edge in meters
        nx, ny, nz (int): Voxel counts per axis
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    s: float
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if not (math.isfinite(self.s) and self.s > 0):
            raise ValidationError(f"Voxel size must be positive, got {self.s}")
        for axis, n, lo, hi in (
            ("x", self.nx, self.x_min, self.x_max),
            ("y", self.ny, self.y_min, self.y_max),
            ("z", self.nz, self.z_min, self.z_max),
        ):
            if n < 1:
                raise ValidationError(f"Voxel count along {axis} must be >= 1, got {n}")
            if abs(n * self.s - (hi - lo)) > 1e-9:
                raise ValidationError(f"Grid constraint N*s = range violated on axis {axis}")

    @classmethod
    def from_limits(cls, limits: Sequence[float], s: float) -> "VoxelGridSpec":
        nx, ny, nz = derive_counts(limits, s)
        return cls(*(float(v) for v in limits), float(s), nx, ny, nz)

    @property
    def limits(self) -> Limits:
        return (self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def num_voxels(self) -> int:
        return self.nx * self.ny * self.nz


def voxel_center(spec: VoxelGridSpec, ix: int, iy: int, iz: int) -> Tuple[float, float, float]:
    """
    World coordinates of a voxel center.

    Raises:
        ValidationError: If any index is out of bounds

    Examples:
        >>> voxel_center(VoxelGridSpec.from_limits((0, 1, 0, 1, 0, 1), 1.0), 0, 0, 0)
        (0.5, 0.5, 0.5)
    """
    for name, i, n in (("ix", ix, spec.nx), ("iy", iy, spec.ny), ("iz", iz, spec.nz)):
        if not 0 <= i < n:
            raise ValidationError(f"Voxel index {name}={i} outside [0, {n})")
    return (
        spec.x_min + (ix + 0.5) * spec.s,
        spec.y_min + (iy + 0.5) * spec.s,
        spec.z_min + (iz + 0.5) * spec.s,
    )


def voxel_centers(spec: VoxelGridSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxel-center coordinate arrays of shape (nx, ny, nz), bitwise equal to voxel_center."""
    ax = spec.x_min + (np.arange(spec.nx) + 0.5) * spec.s
    ay = spec.y_min + (np.arange(spec.ny) + 0.5) * spec.s
    az = spec.z_min + (np.arange(spec.nz) + 0.5) * spec.s
    return np.meshgrid(ax, ay, az, indexing="ij")


@dataclass(frozen=True, eq=False)
class FeatureMap2D:
    """
    Dense 2D feature map at a given stride.

    Attributes:
        data (np.ndarray): float32 array of shape (height, width, channels), row-major
        stride (int): Downscale factor relative to image pixels
    """

    data: np.ndarray
    stride: int = 4

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"Feature map must have shape (height, width, channels), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("Feature map values must be finite")
        if isinstance(self.stride, bool) or int(self.stride) != self.stride or self.stride < 1:
            raise ValidationError(f"Feature stride must be a positive integer, got {self.stride}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "stride", int(self.stride))

    @classmethod
    def from_flat(cls, width: int, height: int, channels: int, values: Sequence[float], stride: int = 4):
        values = np.asarray(values, dtype=np.float32)
        if values.size != width * height * channels:
            raise ValidationError(
                f"Feature data length {values.size} != width*height*channels = {width * height * channels}"
            )
        return cls(values.reshape(height, width, channels), stride)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class CameraView:
    """One posed input of a multi-view set."""

    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    features: FeatureMap2D
    name: str = ""


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """
    Voxel features with per-voxel visibility counts.

    Attributes:
        spec (VoxelGridSpec): Grid the volume lives on
        data (np.ndarray): float32 array (nx, ny, nz, channels)
        mask (np.ndarray): uint32 array (nx, ny, nz); binary for one view, summed
            counts after aggregation
    """

    spec: VoxelGridSpec
    data: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 4 or data.shape[:3] != self.spec.shape:
            raise ValidationError(f"Volume data shape {data.shape} does not match grid {self.spec.shape}")
        mask = np.zeros(self.spec.shape, dtype=np.uint32) if self.mask is None else np.array(self.mask)
        if mask.shape != self.spec.shape:
            raise ValidationError(f"Volume mask shape {mask.shape} does not match grid {self.spec.shape}")
        if mask.dtype.kind not in "ui" or np.any(mask < 0):
            raise ValidationError("Volume mask must hold non-negative integer counts")
        mask = mask.astype(np.uint32)
        if not np.all(np.isfinite(data)):
            raise ValidationError("Volume values must be finite")
        if np.any(data[mask == 0] != 0):
            raise ValidationError("Volume has nonzero features at voxels with zero count")
        data.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def covered_voxels(self) -> int:
        return int(np.count_nonzero(self.mask))


def project_view(view: CameraView, spec: VoxelGridSpec, sampling: str = "nearest") -> VoxelVolume:
    """
    Project one view's feature map into the voxel grid.

    A voxel is visible (mask 1) iff its center has positive camera depth and
    lands in a feature cell: ``0 <= floor(u) < width`` and ``0 <= floor(v) < height``.
    Visible voxels take the feature vector of that cell ("nearest") or the
    bilinear blend of the four surrounding cell centers ("bilinear");
    invisible voxels are zero.

    Args:
        view: Posed view with features
        spec: Voxel grid
        sampling: "nearest" or "bilinear"

    Returns:
        VoxelVolume with a binary mask

    Raises:
        ValidationError: If the sampling mode is unknown
    """
    if sampling not in SAMPLING_MODES:
        raise ValidationError(f"Unknown sampling mode '{sampling}', expected one of {SAMPLING_MODES}")
    features = view.features
    xs, ys, zs = voxel_centers(spec)
    u, v, depth = project_points(view.intrinsics, view.extrinsics, xs, ys, zs, features.stride)
    with np.errstate(invalid="ignore"):
        fu = np.floor(u)
        fv = np.floor(v)
        valid = (depth > 0) & (fu >= 0) & (fu < features.width) & (fv >= 0) & (fv < features.height)

    data = np.zeros(spec.shape + (features.channels,), dtype=np.float32)
    if np.any(valid):
        if sampling == "nearest":
            data[valid] = features.data[fv[valid].astype(np.int64), fu[valid].astype(np.int64)]
        else:
            data[valid] = _bilinear(features.data, u[valid], v[valid])
    return VoxelVolume(spec, data, valid.astype(np.uint32))


def _bilinear(feature_data: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    height, width = feature_data.shape[:2]
    # cell centers sit at integer + 0.5
    uc = u - 0.5
    vc = v - 0.5
    u0 = np.floor(uc)
    v0 = np.floor(vc)
    wu = (uc - u0)[:, None]
    wv = (vc - v0)[:, None]
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    u1 = np.clip(u0 + 1, 0, width - 1)
    v1 = np.clip(v0 + 1, 0, height - 1)
    u0 = np.clip(u0, 0, width - 1)
    v0 = np.clip(v0, 0, height - 1)
    top = feature_data[v0, u0] * (1.0 - wu) + feature_data[v0, u1] * wu
    bottom = feature_data[v1, u0] * (1.0 - wu) + feature_data[v1, u1] * wu
    return top * (1.0 - wv) + bottom * wv


def project_views(
    views: Sequence[CameraView],
    spec: VoxelGridSpec,
    sampling: str = "nearest",
    workers: int = 1
) -> List[VoxelVolume]:
    """Project several views, optionally on a thread pool; output order follows input order."""
    if workers <= 1 or len(views) <= 1:
        return [project_view(view, spec, sampling) for view in views]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda view: project_view(view, spec, sampling), views))


def _canonical_key(volume: VoxelVolume) -> str:
    digest = hashlib.sha256()
    digest.update(volume.mask.tobytes())
    digest.update(volume.data.tobytes())
    return digest.hexdigest()


def aggregate(per_view: Sequence[VoxelVolume]) -> VoxelVolume:
    """
    Average per-view volumes over the views that see each voxel.

    ``V = (sum_t M_t V_t) / max(sum_t M_t, 1)``; the output mask stores the raw
    counts ``sum_t M_t``. Volumes are accumulated in an order determined by
    their content, so any permutation of the input gives a bitwise-identical
    result.

    Raises:
        ValidationError: If no volume is given or grids/channels differ
    """
    if not per_view:
        raise ValidationError("aggregate needs at least one volume")
    spec = per_view[0].spec
    channels = per_view[0].channels
    for i, volume in enumerate(per_view):
        if volume.spec != spec:
            raise ValidationError(f"Volume {i} has a different grid spec")
        if volume.channels != channels:
            raise ValidationError(f"Volume {i} has {volume.channels} channels, expected {channels}")

    order = sorted(range(len(per_view)), key=lambda i: _canonical_key(per_view[i]))
    total = np.zeros(spec.shape + (channels,), dtype=np.float64)
    counts = np.zeros(spec.shape, dtype=np.int64)
    for i in order:
        volume = per_view[i]
        weights = volume.mask.astype(np.float64)[..., None]
        total += weights * volume.data
        counts += volume.mask
    divisor = np.maximum(counts, 1).astype(np.float64)[..., None]
    mean = (total / divisor).astype(np.float32)
    mean[counts == 0] = 0.0
    uncovered = int(np.count_nonzero(counts == 0))
    logger.debug(f"Aggregated {len(per_view)} views; {uncovered} of {spec.num_voxels} voxels unseen")
    return VoxelVolume(spec, mean, counts.astype(np.uint32))


def sample_views(views: Sequence[CameraView], n: Optional[int], seed: int) -> List[CameraView]:
    """
    Choose ``n`` views without replacement, keeping their original order.

    ``n=None`` returns all views.
    """
    if n is None:
        return list(views)
    if not 1 <= n <= len(views):
        raise ValidationError(f"Cannot sample {n} views from a scene with {len(views)}")
    rng = np.random.default_rng(seed)
    chosen = sorted(int(i) for i in rng.choice(len(views), size=n, replace=False))
    return [views[i] for i in chosen]


def coverage_bev(volume: VoxelVolume) -> np.ndarray:
    """Maximum visibility count per (ix, iy) column."""
    return volume.mask.max(axis=2)


def encode_volume(volume: VoxelVolume) -> bytes:
    """Serialize a volume to the little-endian binary container."""
    spec = volume.spec
    header = _HEADER.pack(
        VOLUME_MAGIC, VOLUME_VERSION, spec.nx, spec.ny, spec.nz, volume.channels,
        *spec.limits, spec.s,
    )
    mask = volume.mask.astype("<u4").tobytes()
    data = volume.data.astype("<f4").tobytes()
    return header + mask + data


def decode_volume(payload: bytes, source: str = "<bytes>") -> VoxelVolume:
    """
    Parse the binary container produced by encode_volume.

    Raises:
        ParseError: On bad magic, unsupported version, truncated or oversized payloads
    """
    if len(payload) < _HEADER.size:
        raise ParseError("truncated header", source=source)
    magic, version, nx, ny, nz, channels, *rest = _HEADER.unpack_from(payload)
    if magic != VOLUME_MAGIC:
        raise ParseError(f"bad magic {magic!r}", source=source)
    if version != VOLUME_VERSION:
        raise ParseError(f"unsupported container version {version}", source=source)
    limits, s = rest[:6], rest[6]
    try:
        spec = VoxelGridSpec(*limits, s, nx, ny, nz)
    except ValidationError as e:
        raise ParseError(f"invalid grid in header: {e}", source=source) from e
    n_voxels = nx * ny * nz
    expected = _HEADER.size + 4 * n_voxels + 4 * n_voxels * channels
    if len(payload) != expected:
        raise ParseError(f"payload is {len(payload)} bytes, expected {expected}", source=source)
    offset = _HEADER.size
    mask = np.frombuffer(payload, dtype="<u4", count=n_voxels, offset=offset).reshape(spec.shape)
    offset += 4 * n_voxels
    data = np.frombuffer(payload, dtype="<f4", count=n_voxels * channels, offset=offset)
    try:
        return VoxelVolume(spec, data.reshape(spec.shape + (channels,)), mask.astype(np.uint32))
    except ValidationError as e:
        raise ParseError(str(e), source=source) from e


def save_volume(volume: VoxelVolume, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_volume(volume))
    return path


def load_volume(path: Union[str, Path]) -> VoxelVolume:
    path = Path(path)
    return decode_volume(path.read_bytes(), source=str(path))
