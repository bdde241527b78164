"""
Per-dataset configuration: grid limits, anchor priors, thresholds and loss constants.

Configs are INI files (``key = value`` lines grouped in sections, ``;`` or ``#``
comments) with these sections, units in meters and radians:

    [dataset]  base, name, head, rotation_free, forward_axis, classes
    [grid]     x_min, x_max, y_min, y_max, z_min, z_max, voxel_size, feature_stride, sampling
    [anchor]   w, l, h, z, rotations
    [assign]   pos_iou, neg_iou
    [nms]      iou_threshold
    [loss]     focal_alpha, focal_gamma, smooth_l1_beta
    [eval]     iou_threshold, ap_mode, tp_distance, aoe_mode, indoor_iou
    [stub]     seed, channels, pattern

``base`` names a built-in preset whose values the file then overrides; keys a
file leaves out fall back to the base (or to the dataclass defaults). Lists are
comma-separated.

The four presets carry the grid limits and voxel sizes of the supported
benchmarks. ``forward_axis`` records which grid axis points away from the
camera: the KITTI and SUN RGB-D grids extend forward along y.
"""
import configparser
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from src.core.errors import ParseError, ValidationError
from src.core.evaluation import AOE_MODES, AP_MODES
from src.core.stub_features import StubSpec
from src.core.voxelgrid import SAMPLING_MODES, VoxelGridSpec, derive_counts

logger = logging.getLogger(__name__)

HEADS = ("outdoor", "indoor")
FORWARD_AXES = ("x", "y")
SECTIONS = ("dataset", "grid", "anchor", "assign", "nms", "loss", "eval", "stub")

SUNRGBD_CLASSES = (
    "bed", "table", "sofa", "chair", "toilet", "desk", "dresser", "night_stand", "bookshelf", "bathtub",
)
SCANNET_CLASSES = (
    "cabinet", "bed", "chair", "sofa", "table", "door", "window", "bookshelf", "picture",
    "counter", "desk", "curtain", "refrigerator", "showercurtrain", "toilet", "sink", "bathtub",
    "garbagebin",
)


@dataclass(frozen=True)
class DatasetConfig:
    """
    Everything a pipeline run needs to know about a dataset.

    Attributes:
        name (str): Dataset or preset name
        limits (tuple): (x_min, x_max, y_min, y_max, z_min, z_max) in meters
        voxel_size (float): Voxel edge s in meters
        head (str): "outdoor" (anchors) or "indoor" (anchor-free)
        rotation_free (bool): Boxes are axis-aligned; yaw is neither predicted nor scored
        forward_axis (str): Grid axis pointing away from the camera, "x" or "y"
        classes (tuple): Class names; a class id indexes this tuple
        anchor_prior (tuple): (w, l, h, z) of the outdoor anchors
        anchor_rotations (tuple): Anchor yaws in radians
        pos_iou, neg_iou (float): Anchor assignment thresholds
        nms_iou (float): Rotated NMS threshold
        eval_iou (float): IoU threshold of the KITTI protocol
        indoor_iou (tuple): IoU thresholds of the indoor protocol
    """

    name: str
    limits: Tuple[float, float, float, float, float, float]
    voxel_size: float
    head: str = "outdoor"
    rotation_free: bool = False
    forward_axis: str = "x"
    classes: Tuple[str, ...] = ("Car",)
    feature_stride: int = 4
    sampling: str = "nearest"
    anchor_prior: Tuple[float, float, float, float] = (1.6, 3.9, 1.56, -1.78)
    anchor_rotations: Tuple[float, ...] = (0.0, math.pi / 2)
    pos_iou: float = 0.6
    neg_iou: float = 0.45
    nms_iou: float = 0.1
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0 / 9.0
    eval_iou: float = 0.7
    ap_mode: str = "interp40"
    tp_distance: float = 2.0
    aoe_mode: str = "orientation"
    indoor_iou: Tuple[float, ...] = (0.25, 0.5)
    stub_seed: int = 0
    stub_channels: int = 16
    stub_pattern: str = "coordinate-encoding"

    def __post_init__(self):
        if len(self.limits) != 6:
            raise ValidationError(f"limits needs 6 values, got {len(self.limits)}")
        derive_counts(self.limits, self.voxel_size)
        _check_choice("head", self.head, HEADS)
        _check_choice("forward_axis", self.forward_axis, FORWARD_AXES)
        _check_choice("sampling", self.sampling, SAMPLING_MODES)
        _check_choice("ap_mode", self.ap_mode, AP_MODES)
        _check_choice("aoe_mode", self.aoe_mode, AOE_MODES)
        if not self.classes:
            raise ValidationError("At least one class name is required")
        if not 0.0 <= self.neg_iou <= self.pos_iou <= 1.0:
            raise ValidationError(f"Need 0 <= neg_iou <= pos_iou <= 1, got {self.neg_iou}, {self.pos_iou}")
        for name in ("nms_iou", "eval_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if any(v <= 0 for v in self.anchor_prior[:3]):
            raise ValidationError(f"Anchor extents must be positive, got {self.anchor_prior}")
        if self.feature_stride < 1:
            raise ValidationError(f"feature_stride must be >= 1, got {self.feature_stride}")
        if self.tp_distance < 0:
            raise ValidationError(f"tp_distance must be non-negative, got {self.tp_distance}")
        self.stub_spec()

    def grid_spec(self) -> VoxelGridSpec:
        return VoxelGridSpec.from_limits(self.limits, self.voxel_size)

    def stub_spec(self) -> StubSpec:
        return StubSpec(self.stub_seed, self.stub_channels, self.stub_pattern)

    def class_id(self, name: str) -> int:
        if name not in self.classes:
            raise ValidationError(f"Unknown class '{name}' for dataset '{self.name}'")
        return self.classes.index(name)


def _check_choice(name: str, value: str, choices: Tuple[str, ...]) -> None:
    if value not in choices:
        raise ValidationError(f"{name} must be one of {choices}, got '{value}'")


PRESETS: Dict[str, DatasetConfig] = {
    "kitti": DatasetConfig(
        name="kitti",
        limits=(-39.68, 39.68, 0.0, 69.12, -2.92, 0.92),
        voxel_size=0.32,
        forward_axis="y",
    ),
    "nuscenes": DatasetConfig(
        name="nuscenes",
        limits=(-49.92, 49.92, -49.92, 49.92, -2.92, 0.92),
        voxel_size=0.32,
        classes=("car",),
        anchor_prior=(1.95, 4.6, 1.72, -1.78),
        ap_mode="all-points",
    ),
    "sunrgbd": DatasetConfig(
        name="sunrgbd",
        limits=(-3.2, 3.2, 0.0, 6.4, -2.28, 0.28),
        voxel_size=0.16,
        head="indoor",
        forward_axis="y",
        classes=SUNRGBD_CLASSES,
        nms_iou=0.25,
        ap_mode="all-points",
        indoor_iou=(0.15, 0.25, 0.5),
    ),
    "scannet": DatasetConfig(
        name="scannet",
        limits=(-3.2, 3.2, -3.2, 3.2, -1.28, 1.28),
        voxel_size=0.16,
        head="indoor",
        rotation_free=True,
        classes=SCANNET_CLASSES,
        nms_iou=0.25,
        ap_mode="all-points",
        indoor_iou=(0.25, 0.5),
    ),
}

# (section, key) -> dataclass field; limits are handled separately
_KEYS = {
    ("dataset", "name"): "name",
    ("dataset", "head"): "head",
    ("dataset", "rotation_free"): "rotation_free",
    ("dataset", "forward_axis"): "forward_axis",
    ("dataset", "classes"): "classes",
    ("grid", "voxel_size"): "voxel_size",
    ("grid", "feature_stride"): "feature_stride",
    ("grid", "sampling"): "sampling",
    ("anchor", "rotations"): "anchor_rotations",
    ("assign", "pos_iou"): "pos_iou",
    ("assign", "neg_iou"): "neg_iou",
    ("nms", "iou_threshold"): "nms_iou",
    ("loss", "focal_alpha"): "focal_alpha",
    ("loss", "focal_gamma"): "focal_gamma",
    ("loss", "smooth_l1_beta"): "smooth_l1_beta",
    ("eval", "iou_threshold"): "eval_iou",
    ("eval", "ap_mode"): "ap_mode",
    ("eval", "tp_distance"): "tp_distance",
    ("eval", "aoe_mode"): "aoe_mode",
    ("eval", "indoor_iou"): "indoor_iou",
    ("stub", "seed"): "stub_seed",
    ("stub", "channels"): "stub_channels",
    ("stub", "pattern"): "stub_pattern",
}
_LIMIT_KEYS = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")
_ANCHOR_KEYS = ("w", "l", "h", "z")


def _section_line(text: str, section: str) -> Optional[int]:
    for number, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == f"[{section}]":
            return number
    return None


def _key_line(text: str, section: str, key: str) -> Optional[int]:
    current = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
        elif current == section and line.split("=", 1)[0].strip().lower() == key:
            return number
    return None


def _convert(field_name: str, raw: str):
    kind = {f.name: f.type for f in fields(DatasetConfig)}[field_name]
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
            raise ValueError(f"'{raw}' is not a boolean")
        return configparser.ConfigParser.BOOLEAN_STATES[lowered]
    if kind is int:
        return int(raw)
    if kind is float:
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError(f"'{raw}' is not finite")
        return value
    if kind is str:
        return raw.strip()
    items = [item.strip() for item in raw.split(",") if item.strip()]
    if field_name == "classes":
        return tuple(items)
    values = tuple(float(item) for item in items)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"'{raw}' has non-finite values")
    return values


def parse_config(text: str, source: str = "<config>") -> DatasetConfig:
    """
    Build a DatasetConfig from INI text.

    Raises:
        ParseError: On INI syntax errors, unknown sections or keys, bad values
            or an inconsistent grid, with the offending line and key
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ParseError("expected a [section] header", source, e.lineno) from None
    except configparser.ParsingError as e:
        errors = getattr(e, "errors", None)
        raise ParseError("malformed line", source, errors[0][0] if errors else None) from None
    except configparser.DuplicateOptionError as e:
        raise ParseError(f"duplicate key '{e.option}'", source, e.lineno, e.option) from None
    except configparser.DuplicateSectionError as e:
        raise ParseError(f"duplicate section '{e.section}'", source, e.lineno) from None
    except configparser.Error as e:
        raise ParseError(str(e).splitlines()[0], source) from None

    for section in parser.sections():
        if section not in SECTIONS:
            raise ParseError(f"unknown section [{section}]", source, _section_line(text, section))

    base_name = parser.get("dataset", "base", fallback=None)
    if base_name is not None and base_name.strip() not in PRESETS:
        raise ParseError(
            f"unknown base preset '{base_name}'", source, _key_line(text, "dataset", "base"), "dataset.base"
        )
    base = PRESETS[base_name.strip()] if base_name else None

    values = {}
    limits = list(base.limits) if base else [None] * 6
    prior = list(base.anchor_prior) if base else list(DatasetConfig.anchor_prior)
    for section in parser.sections():
        for key, raw in parser.items(section):
            where = dict(source=source, line=_key_line(text, section, key), field=f"{section}.{key}")
            try:
                if section == "dataset" and key == "base":
                    continue
                if section == "grid" and key in _LIMIT_KEYS:
                    limits[_LIMIT_KEYS.index(key)] = float(raw)
                elif section == "anchor" and key in _ANCHOR_KEYS:
                    prior[_ANCHOR_KEYS.index(key)] = float(raw)
                elif (section, key) in _KEYS:
                    values[_KEYS[(section, key)]] = _convert(_KEYS[(section, key)], raw)
                else:
                    raise ParseError("unknown key", **where)
            except (ValueError, OverflowError) as e:
                if isinstance(e, ParseError):
                    raise
                raise ParseError(f"bad value '{raw}': {e}", **where) from None

    missing = [k for k, v in zip(_LIMIT_KEYS, limits) if v is None]
    if missing:
        raise ParseError(f"missing grid keys {missing} and no base preset", source, field="grid")
    if "voxel_size" not in values and base is None:
        raise ParseError("missing grid.voxel_size and no base preset", source, field="grid.voxel_size")
    values["limits"] = tuple(limits)
    values["anchor_prior"] = tuple(prior)
    values.setdefault("name", base.name if base else Path(str(source)).stem)
    try:
        config = replace(base, **values) if base else DatasetConfig(**values)
    except ValidationError as e:
        raise ParseError(str(e), source) from None
    logger.debug(f"Loaded config '{config.name}' from {source}")
    return config


def load_config(name_or_path: Union[str, Path]) -> DatasetConfig:
    """
    Resolve ``--config``: a preset name, or a path to an INI file.

    Raises:
        ParseError: If the file is malformed
        OSError: If the file cannot be read
    """
    key = str(name_or_path)
    if key in PRESETS:
        return PRESETS[key]
    path = Path(name_or_path)
    if not path.exists() and path.suffix == "":
        raise ParseError(f"unknown preset '{key}', expected one of {sorted(PRESETS)} or a file path")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def config_to_ini(config: DatasetConfig) -> str:
    """Render a config as a complete INI document (no ``base``)."""
    data = asdict(config)
    sections: Dict[str, Dict[str, str]] = {section: {} for section in SECTIONS}
    for (section, key), field_name in _KEYS.items():
        if section == "grid" and key == "voxel_size":
            continue
        sections[section][key] = _format(data[field_name])
    for key, value in zip(_LIMIT_KEYS, config.limits):
        sections["grid"][key] = _format(float(value))
    sections["grid"]["voxel_size"] = _format(float(config.voxel_size))
    for key, value in zip(_ANCHOR_KEYS, config.anchor_prior):
        sections["anchor"][key] = _format(float(value))
    lines = ["; lengths in meters, angles in radians"]
    for section, entries in sections.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}" for key, value in entries.items())
        lines.append("")
    return "\n".join(lines)


def save_config(config: DatasetConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_to_ini(config), encoding="utf-8")
    return path
