"""
JSON metric reports.

One report document is written per evaluation run. Its schema is documented
in docs/file_formats.md; all protocols share the envelope

    {"version": 1, "protocol": "<name>", "config": "<preset>", "classes": {...}, ...}

where ``classes`` is keyed by class name. PR points are included so curves can
be re-plotted without re-running evaluation.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Union

from src.core.evaluation import DistanceReport, MapResult, PrCurve, TpErrors

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
PROTOCOLS = ("kitti-iou", "distance", "indoor-map")


def class_name(class_id: int, class_names: Sequence[str]) -> str:
    """Configured name of a class id, or ``class_<id>`` when out of range."""
    if 0 <= class_id < len(class_names):
        return class_names[class_id]
    return f"class_{class_id}"


def curve_to_dict(curve: PrCurve, points: bool = True) -> Dict[str, Any]:
    entry: Dict[str, Any] = {"ap": curve.ap, "mode": curve.mode, "n_gt": curve.n_gt}
    if points:
        entry["recall"] = list(curve.recall)
        entry["precision"] = list(curve.precision)
    return entry


def tp_errors_to_dict(errors: Optional[TpErrors]) -> Optional[Dict[str, float]]:
    if errors is None:
        return None
    return {"ate": errors.ate, "ase": errors.ase, "aoe": errors.aoe}


def map_to_dict(result: MapResult, class_names: Sequence[str]) -> Dict[str, Any]:
    return {
        "iou_threshold": result.iou_threshold,
        "mean_ap": result.mean_ap,
        "classes": {
            class_name(cid, class_names): curve_to_dict(curve) for cid, curve in sorted(result.per_class.items())
        },
    }


def kitti_report(
    result: Mapping[int, Mapping[str, Mapping[str, PrCurve]]],
    class_names: Sequence[str],
    iou_threshold: float,
    config_name: str = ""
) -> Dict[str, Any]:
    """Report for ``kitti_protocol`` output: per class, per difficulty, AP_3D and AP_BEV."""
    classes = {}
    for cid, levels in sorted(result.items()):
        classes[class_name(cid, class_names)] = {
            level: {kind: curve_to_dict(curve) for kind, curve in kinds.items()} for level, kinds in levels.items()
        }
    return _envelope("kitti-iou", config_name, classes, iou_threshold=iou_threshold)


def distance_report(
    reports: Mapping[int, DistanceReport],
    class_names: Sequence[str],
    tp_distance: float,
    config_name: str = ""
) -> Dict[str, Any]:
    """Report for ``distance_protocol`` output, with the mean AP over classes."""
    classes = {}
    for cid, report in sorted(reports.items()):
        classes[class_name(cid, class_names)] = {
            "thresholds": {str(t): curve_to_dict(curve) for t, curve in report.ap_by_threshold.items()},
            "mean_ap": report.mean_ap,
            "tp_errors": tp_errors_to_dict(report.tp_errors),
        }
    mean = sum(r.mean_ap for r in reports.values()) / len(reports) if reports else 0.0
    return _envelope("distance", config_name, classes, tp_distance=tp_distance, mean_ap=mean)


def indoor_report(
    results: Mapping[float, MapResult],
    class_names: Sequence[str],
    config_name: str = "",
    scene_metrics: Optional[Mapping[str, float]] = None
) -> Dict[str, Any]:
    """Report for ``indoor_protocol`` output; one mAP block per IoU threshold."""
    by_threshold = {str(t): map_to_dict(r, class_names) for t, r in results.items()}
    extra: Dict[str, Any] = {"thresholds": by_threshold}
    if scene_metrics:
        extra["scene_understanding"] = dict(scene_metrics)
    return _envelope("indoor-map", config_name, {}, **extra)


def _envelope(protocol: str, config_name: str, classes: Dict[str, Any], **extra) -> Dict[str, Any]:
    doc: Dict[str, Any] = {"version": REPORT_VERSION, "protocol": protocol, "config": config_name}
    doc.update(extra)
    doc["classes"] = classes
    return doc


def report_to_json(report: Dict[str, Any]) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def save_report(report: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_to_json(report), encoding="utf-8")
    logger.info(f"Wrote {report['protocol']} report to {path}")
    return path
