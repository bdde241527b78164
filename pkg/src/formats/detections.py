"""
Detection documents (JSON) exchanged by the nms, eval and render-bev commands.

    {
      "version": 1,
      "detections": [
        {"box": [x, y, z, w, h, l, theta], "score": 0.93, "class_id": 0, "scene_id": "000123"}
      ]
    }

``scene_id`` is optional and groups detections for multi-scene evaluation.
"""
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from src.core.errors import ParseError, ValidationError
from src.core.geometry import Box3D
from src.core.suppression import Detection

logger = logging.getLogger(__name__)

DETECTIONS_VERSION = 1


@dataclass(frozen=True)
class DetectionSet:
    """Detections with the scene each one belongs to (parallel lists)."""

    detections: List[Detection] = field(default_factory=list)
    scene_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.detections) != len(self.scene_ids):
            raise ValidationError(f"{len(self.detections)} detections but {len(self.scene_ids)} scene ids")

    def __len__(self) -> int:
        return len(self.detections)

    @classmethod
    def single_scene(cls, detections: Sequence[Detection], scene_id: str = "") -> "DetectionSet":
        return cls(list(detections), [scene_id] * len(detections))

    def by_scene(self) -> Dict[str, List[Detection]]:
        """Detections grouped by scene id, scenes in order of first appearance."""
        groups: Dict[str, List[Detection]] = OrderedDict()
        for det, scene_id in zip(self.detections, self.scene_ids):
            groups.setdefault(scene_id, []).append(det)
        return groups

    def subset(self, indices: Sequence[int]) -> "DetectionSet":
        return DetectionSet([self.detections[i] for i in indices], [self.scene_ids[i] for i in indices])


def _fail(message: str, source: str, path: Optional[str] = None) -> ParseError:
    return ParseError(message, source, field=path)


def _parse_detection(raw: Any, source: str, path: str) -> Detection:
    if not isinstance(raw, dict):
        raise _fail("expected an object", source, path)
    if "box" not in raw or "score" not in raw:
        raise _fail("detections need 'box' and 'score'", source, path)
    box = raw["box"]
    if not isinstance(box, list) or len(box) != 7:
        raise _fail("expected 7 box values", source, f"{path}.box")
    values = []
    for i, v in enumerate(box):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _fail("expected a number", source, f"{path}.box[{i}]")
        values.append(v)
    score = raw["score"]
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise _fail("expected a number", source, f"{path}.score")
    class_id = raw.get("class_id", 0)
    if isinstance(class_id, bool) or not isinstance(class_id, int):
        raise _fail("expected an integer", source, f"{path}.class_id")
    try:
        return Detection(Box3D.from_array(values), float(score), class_id)
    except (ValidationError, OverflowError) as e:
        raise _fail(str(e), source, path) from None


def parse_detections(text: str, source: str = "<detections>") -> DetectionSet:
    """
    Parse a detections document.

    Raises:
        ParseError: On malformed JSON or an invalid entry
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, source, e.lineno) from None
    except (ValueError, RecursionError) as e:
        raise ParseError(f"invalid JSON: {e}", source) from None
    if not isinstance(doc, dict):
        raise _fail("expected an object", source, "$")
    if doc.get("version") != DETECTIONS_VERSION:
        raise _fail(f"unsupported version {doc.get('version')!r}, expected {DETECTIONS_VERSION}", source, "version")
    entries = doc.get("detections", [])
    if not isinstance(entries, list):
        raise _fail("expected a list", source, "detections")
    detections, scene_ids = [], []
    for i, raw in enumerate(entries):
        path = f"detections[{i}]"
        detections.append(_parse_detection(raw, source, path))
        scene_id = raw.get("scene_id", "")
        if not isinstance(scene_id, str):
            raise _fail("expected a string", source, f"{path}.scene_id")
        scene_ids.append(scene_id)
    return DetectionSet(detections, scene_ids)


def load_detections(path: Union[str, Path]) -> DetectionSet:
    path = Path(path)
    return parse_detections(path.read_text(encoding="utf-8"), source=str(path))


def detections_to_dict(dets: DetectionSet) -> Dict[str, Any]:
    entries = []
    for det, scene_id in zip(dets.detections, dets.scene_ids):
        entry = {"box": det.box.as_list(), "score": det.score, "class_id": det.class_id}
        if scene_id:
            entry["scene_id"] = scene_id
        entries.append(entry)
    return {"version": DETECTIONS_VERSION, "detections": entries}


def save_detections(dets: DetectionSet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(detections_to_dict(dets), indent=2) + "\n", encoding="utf-8")
    logger.debug(f"Wrote {len(dets)} detections to {path}")
    return path
