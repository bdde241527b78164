"""
Deterministic stand-in for the learned 2D backbone and 3D necks.

Feature maps are generated from integer arithmetic only (a counter-based
SplitMix64 generator), so a fixed seed yields bitwise-identical maps on every
platform. Three patterns are available:

- seeded-random: uniform values in [0, 1) per cell and channel
- coordinate-encoding: channel 0 holds the cell column u, channel 1 the row v,
  remaining channels are seeded-random; projecting such a map makes the
  projection of every voxel directly readable from its features
- one-hot: channel c is 1 at cell index ``c mod (width * height)`` (row-major
  cell index ``v * width + u``) and 0 elsewhere

Also checks the multi-scale shape contract of the 3D neck outputs.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.core.errors import ValidationError
from src.core.voxelgrid import FeatureMap2D, VoxelGridSpec

PATTERNS = ("seeded-random", "coordinate-encoding", "one-hot")

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class StubSpec:
    """
    Parameters of the feature stub.

    Attributes:
        seed (int): 64-bit seed
        channels (int): Feature channels c1 (>= 1)
        pattern (str): One of PATTERNS
    """

    seed: int = 0
    channels: int = 16
    pattern: str = "coordinate-encoding"

    def __post_init__(self):
        if self.channels < 1:
            raise ValidationError(f"Stub channels must be >= 1, got {self.channels}")
        if self.pattern not in PATTERNS:
            raise ValidationError(f"Unknown stub pattern '{self.pattern}', expected one of {PATTERNS}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError(f"Stub seed must fit in 64 bits, got {self.seed}")


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of SplitMix64 started at ``seed``, as uint64."""
    with np.errstate(over="ignore"):
        state = np.uint64(seed) + _GOLDEN * np.arange(1, count + 1, dtype=np.uint64)
        z = state & _MASK64
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def uniform_floats(seed: int, count: int) -> np.ndarray:
    """Floats in [0, 1) from the top 53 bits of SplitMix64 outputs."""
    bits = splitmix64(seed, count) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / 9007199254740992.0)


def make_features(spec: StubSpec, width: int, height: int, stride: int = 4) -> FeatureMap2D:
    """
    Generate a deterministic feature map.

    Args:
        spec: Stub parameters
        width, height: Feature-grid dimensions (image dimensions / stride)
        stride: Stride recorded on the returned map

    Returns:
        FeatureMap2D of shape (height, width, spec.channels)

    Raises:
        ValidationError: If a dimension is < 1
    """
    if width < 1 or height < 1:
        raise ValidationError(f"Feature map dims must be >= 1, got {width}x{height}")
    channels = spec.channels
    if spec.pattern == "one-hot":
        data = np.zeros((height * width, channels), dtype=np.float32)
        cells = np.arange(channels) % (width * height)
        data[cells, np.arange(channels)] = 1.0
        return FeatureMap2D(data.reshape(height, width, channels), stride)

    data = uniform_floats(spec.seed, height * width * channels).astype(np.float32)
    data = data.reshape(height, width, channels)
    if spec.pattern == "coordinate-encoding":
        data[:, :, 0] = np.arange(width, dtype=np.float32)[None, :]
        if channels > 1:
            data[:, :, 1] = np.arange(height, dtype=np.float32)[:, None]
    return FeatureMap2D(data, stride)


def feature_dims(image_width: int, image_height: int, stride: int) -> Tuple[int, int]:
    """Feature-grid size for an image: ``W / stride`` by ``H / stride``, rounded down."""
    width, height = image_width // stride, image_height // stride
    if width < 1 or height < 1:
        raise ValidationError(f"Image {image_width}x{image_height} is smaller than one stride-{stride} cell")
    return width, height


def check_multiscale_shapes(spec: VoxelGridSpec, c2: int) -> List[Tuple[int, int, int, int]]:
    """
    Shapes of the three neck outputs: grid / 4, grid / 2 and the full grid.

    Raises:
        ValidationError: If a voxel count is not divisible by 4 or c2 < 1

    Examples:
        >>> check_multiscale_shapes(VoxelGridSpec.from_limits((-3.2, 3.2, 0, 6.4, -2.28, 0.28), 0.16), 256)
        [(10, 10, 4, 256), (20, 20, 8, 256), (40, 40, 16, 256)]
    """
    if c2 < 1:
        raise ValidationError(f"Channel count must be >= 1, got {c2}")
    if any(n % 4 for n in spec.shape):
        raise ValidationError(f"Grid {spec.shape} is not divisible by 4")
    return [(spec.nx // f, spec.ny // f, spec.nz // f, c2) for f in (4, 2, 1)]
