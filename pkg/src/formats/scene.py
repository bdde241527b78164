"""
Multi-view scene documents (JSON, schema version 1).

A scene bundles posed views, annotated objects and the name of the grid
preset it is meant for::

    {
      "version": 1,
      "scene_id": "synth-0000",
      "grid": "scannet",
      "views": [
        {
          "name": "view-0",
          "image": "optional/reference.png",
          "intrinsics": {"fx": 100.0, "fy": 100.0, "cx": 64.0, "cy": 48.0},
          "extrinsics": {"rotation": [[...], [...], [...]], "translation": [tx, ty, tz]},
          "features": {"width": 32, "height": 24, "channels": 4, "stride": 4, "data": [...]}
        },
        {
          "intrinsics": ..., "extrinsics": ...,
          "stub": {"width": 32, "height": 24, "stride": 4, "seed": 7, "channels": 16,
                   "pattern": "coordinate-encoding"}
        }
      ],
      "objects": [{"box": [x, y, z, w, h, l, theta], "class_id": 0, "difficulty": null, "ignore": false}],
      "layout": [x, y, z, w, h, l, theta],
      "pose": {"beta": 0.0, "gamma": 0.0}
    }

Every view carries its features either inline (``data`` row-major over height,
width, channels) or as a ``stub`` block that is expanded deterministically on
load. ``image`` is kept as a reference only; images are never decoded.
Validation errors name the JSON path of the offending field.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from src.core.errors import ParseError, ValidationError
from src.core.evaluation import Difficulty, GroundTruthObject
from src.core.geometry import Box3D, CameraExtrinsics, CameraIntrinsics
from src.core.losses import PoseAngles
from src.core.stub_features import StubSpec, feature_dims, make_features
from src.core.voxelgrid import CameraView, FeatureMap2D

logger = logging.getLogger(__name__)

SCENE_VERSION = 1


@dataclass(frozen=True, eq=False)
class SceneView:
    """A posed view plus how its features were provided, so it can be written back."""

    view: CameraView
    image: Optional[str] = None
    stub: Optional[Dict[str, Any]] = None


@dataclass(frozen=True, eq=False)
class SceneFile:
    """
    Parsed scene document.

    Attributes:
        views (list): SceneView entries, at least one
        objects (list): GroundTruthObject annotations
        grid (str): Name of the grid preset the scene targets
        scene_id (str): Identifier used in reports
        layout (Box3D): Optional room layout box
        pose (PoseAngles): Optional camera pitch/roll
    """

    views: List[SceneView]
    objects: List[GroundTruthObject] = field(default_factory=list)
    grid: str = "scannet"
    scene_id: str = ""
    layout: Optional[Box3D] = None
    pose: Optional[PoseAngles] = None

    def __post_init__(self):
        if not self.views:
            raise ValidationError("A scene needs at least one view")

    @property
    def camera_views(self) -> List[CameraView]:
        return [v.view for v in self.views]

    @property
    def boxes(self) -> List[Box3D]:
        return [o.box for o in self.objects]


class _Reader:
    """Typed accessors that report the JSON path of whatever they reject."""

    def __init__(self, source: str):
        self.source = source

    def fail(self, path: str, message: str) -> ParseError:
        return ParseError(message, self.source, field=path)

    def obj(self, value: Any, path: str) -> Dict[str, Any]:
        if not isinstance(value, dict):
            raise self.fail(path, f"expected an object, got {type(value).__name__}")
        return value

    def get(self, container: Dict[str, Any], key: str, path: str) -> Any:
        if key not in container:
            raise self.fail(f"{path}.{key}" if path else key, "missing required field")
        return container[key]

    def sequence(self, value: Any, path: str) -> List[Any]:
        if not isinstance(value, list):
            raise self.fail(path, f"expected a list, got {type(value).__name__}")
        return value

    def number(self, value: Any, path: str) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail(path, f"expected a number, got {type(value).__name__}")
        try:
            number = float(value)
        except OverflowError:
            raise self.fail(path, "number is out of range") from None
        if not math.isfinite(number):
            raise self.fail(path, "number must be finite")
        return number

    def integer(self, value: Any, path: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(path, f"expected an integer, got {type(value).__name__}")
        return value

    def string(self, value: Any, path: str) -> str:
        if not isinstance(value, str):
            raise self.fail(path, f"expected a string, got {type(value).__name__}")
        return value

    def numbers(self, value: Any, path: str, count: Optional[int] = None) -> List[float]:
        items = self.sequence(value, path)
        if count is not None and len(items) != count:
            raise self.fail(path, f"expected {count} numbers, got {len(items)}")
        return [self.number(v, f"{path}[{i}]") for i, v in enumerate(items)]

    def build(self, path: str, factory, *args, **kwargs):
        try:
            return factory(*args, **kwargs)
        except ValidationError as e:
            raise self.fail(path, str(e)) from None


def _parse_view(r: _Reader, raw: Any, path: str) -> SceneView:
    data = r.obj(raw, path)
    k = r.obj(r.get(data, "intrinsics", path), f"{path}.intrinsics")
    intrinsics = r.build(
        f"{path}.intrinsics", CameraIntrinsics,
        *(r.number(r.get(k, name, f"{path}.intrinsics"), f"{path}.intrinsics.{name}") for name in ("fx", "fy", "cx", "cy"))
    )
    e = r.obj(r.get(data, "extrinsics", path), f"{path}.extrinsics")
    rows = r.sequence(r.get(e, "rotation", f"{path}.extrinsics"), f"{path}.extrinsics.rotation")
    if len(rows) != 3:
        raise r.fail(f"{path}.extrinsics.rotation", f"expected 3 rows, got {len(rows)}")
    rotation = [r.numbers(row, f"{path}.extrinsics.rotation[{i}]", 3) for i, row in enumerate(rows)]
    translation = r.numbers(e.get("translation", [0.0, 0.0, 0.0]), f"{path}.extrinsics.translation", 3)
    extrinsics = r.build(f"{path}.extrinsics", CameraExtrinsics, np.array(rotation), np.array(translation))

    name = r.string(data.get("name", ""), f"{path}.name")
    image = data.get("image")
    if image is not None:
        image = r.string(image, f"{path}.image")

    if ("features" in data) == ("stub" in data):
        raise r.fail(path, "a view needs exactly one of 'features' or 'stub'")
    stub = None
    if "features" in data:
        features = _parse_features(r, data["features"], f"{path}.features")
    else:
        stub = r.obj(data["stub"], f"{path}.stub")
        features = _expand_stub(r, stub, f"{path}.stub")
    view = CameraView(intrinsics, extrinsics, features, name)
    return SceneView(view, image, stub)


def _parse_features(r: _Reader, raw: Any, path: str) -> FeatureMap2D:
    data = r.obj(raw, path)
    width = r.integer(r.get(data, "width", path), f"{path}.width")
    height = r.integer(r.get(data, "height", path), f"{path}.height")
    channels = r.integer(r.get(data, "channels", path), f"{path}.channels")
    stride = r.integer(data.get("stride", 4), f"{path}.stride")
    if min(width, height, channels) < 1:
        raise r.fail(path, f"dimensions must be >= 1, got {width}x{height}x{channels}")
    values = r.numbers(r.get(data, "data", path), f"{path}.data", width * height * channels)
    return r.build(path, FeatureMap2D.from_flat, width, height, channels, values, stride)


def _expand_stub(r: _Reader, stub: Dict[str, Any], path: str) -> FeatureMap2D:
    width = r.integer(r.get(stub, "width", path), f"{path}.width")
    height = r.integer(r.get(stub, "height", path), f"{path}.height")
    stride = r.integer(stub.get("stride", 4), f"{path}.stride")
    seed = r.integer(stub.get("seed", 0), f"{path}.seed")
    channels = r.integer(stub.get("channels", 16), f"{path}.channels")
    pattern = r.string(stub.get("pattern", "coordinate-encoding"), f"{path}.pattern")
    if width * height * channels > 50_000_000:
        raise r.fail(path, "stub feature map is too large")
    spec = r.build(path, StubSpec, seed, channels, pattern)
    return r.build(path, make_features, spec, width, height, stride)


def _parse_object(r: _Reader, raw: Any, path: str) -> GroundTruthObject:
    data = r.obj(raw, path)
    box = r.build(f"{path}.box", Box3D.from_array, r.numbers(r.get(data, "box", path), f"{path}.box", 7))
    class_id = r.integer(data.get("class_id", 0), f"{path}.class_id")
    difficulty = data.get("difficulty")
    if difficulty is not None:
        value = r.string(difficulty, f"{path}.difficulty")
        try:
            difficulty = Difficulty(value)
        except ValueError:
            raise r.fail(f"{path}.difficulty", f"unknown difficulty '{value}'") from None
    ignore = data.get("ignore", False)
    if not isinstance(ignore, bool):
        raise r.fail(f"{path}.ignore", "expected true or false")
    return GroundTruthObject(box, class_id, difficulty, ignore)


def parse_scene(text: str, source: str = "<scene>") -> SceneFile:
    """
    Parse and validate a scene document.

    Raises:
        ParseError: On malformed JSON (with line number) or a schema violation
            (with the JSON path of the field)
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, source, e.lineno) from None
    except (ValueError, RecursionError) as e:
        raise ParseError(f"invalid JSON: {e}", source) from None
    r = _Reader(source)
    doc = r.obj(raw, "$")
    version = r.integer(r.get(doc, "version", ""), "version")
    if version != SCENE_VERSION:
        raise r.fail("version", f"unsupported scene version {version}, expected {SCENE_VERSION}")
    views_raw = r.sequence(r.get(doc, "views", ""), "views")
    if not views_raw:
        raise r.fail("views", "a scene needs at least one view")
    views = [_parse_view(r, v, f"views[{i}]") for i, v in enumerate(views_raw)]
    objects = [_parse_object(r, o, f"objects[{i}]") for i, o in enumerate(r.sequence(doc.get("objects", []), "objects"))]

    layout = doc.get("layout")
    if layout is not None:
        layout = r.build("layout", Box3D.from_array, r.numbers(layout, "layout", 7))
    pose = doc.get("pose")
    if pose is not None:
        p = r.obj(pose, "pose")
        pose = r.build(
            "pose", PoseAngles,
            r.number(r.get(p, "beta", "pose"), "pose.beta"),
            r.number(r.get(p, "gamma", "pose"), "pose.gamma"),
        )
    scene = SceneFile(
        views=views,
        objects=objects,
        grid=r.string(doc.get("grid", "scannet"), "grid"),
        scene_id=r.string(doc.get("scene_id", ""), "scene_id"),
        layout=layout,
        pose=pose,
    )
    logger.debug(f"Parsed scene '{scene.scene_id}' with {len(views)} views and {len(objects)} objects")
    return scene


def load_scene(path: Union[str, Path]) -> SceneFile:
    """
    Read a scene file.

    Raises:
        ParseError: If the document is invalid
        OSError: If the file cannot be read
    """
    path = Path(path)
    return parse_scene(path.read_text(encoding="utf-8"), source=str(path))


def _floats(values) -> List[float]:
    return [float(v) for v in np.asarray(values).reshape(-1)]


def view_to_dict(scene_view: SceneView) -> Dict[str, Any]:
    view = scene_view.view
    k, rt = view.intrinsics, view.extrinsics
    out: Dict[str, Any] = {"name": view.name}
    if scene_view.image is not None:
        out["image"] = scene_view.image
    out["intrinsics"] = {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy}
    out["extrinsics"] = {
        "rotation": [_floats(row) for row in rt.rotation],
        "translation": _floats(rt.translation),
    }
    if scene_view.stub is not None:
        out["stub"] = dict(scene_view.stub)
    else:
        f = view.features
        out["features"] = {
            "width": f.width,
            "height": f.height,
            "channels": f.channels,
            "stride": f.stride,
            "data": _floats(f.data),
        }
    return out


def scene_to_dict(scene: SceneFile) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "version": SCENE_VERSION,
        "scene_id": scene.scene_id,
        "grid": scene.grid,
        "views": [view_to_dict(v) for v in scene.views],
        "objects": [
            {
                "box": o.box.as_list(),
                "class_id": o.class_id,
                "difficulty": o.difficulty.value if o.difficulty else None,
                "ignore": o.ignore,
            }
            for o in scene.objects
        ],
    }
    if scene.layout is not None:
        doc["layout"] = scene.layout.as_list()
    if scene.pose is not None:
        doc["pose"] = {"beta": scene.pose.beta, "gamma": scene.pose.gamma}
    return doc


def save_scene(scene: SceneFile, path: Union[str, Path]) -> Path:
    """Write a scene as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n", encoding="utf-8")
    return path


def stub_view(
    intrinsics: CameraIntrinsics,
    extrinsics: CameraExtrinsics,
    image_size: Tuple[int, int],
    spec: StubSpec,
    stride: int = 4,
    name: str = ""
) -> SceneView:
    """Build a view whose features come from the stub generator at ``image_size / stride``."""
    width, height = feature_dims(image_size[0], image_size[1], stride)
    stub = {
        "width": width,
        "height": height,
        "stride": stride,
        "seed": spec.seed,
        "channels": spec.channels,
        "pattern": spec.pattern,
    }
    features = make_features(spec, width, height, stride)
    return SceneView(CameraView(intrinsics, extrinsics, features, name), None, stub)
