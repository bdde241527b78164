"""
Command implementations behind ``voxeldet``.

Each command reads its inputs from files, writes its outputs into one
directory and times its stages on the run manifest it is given. Commands are
pure functions of their inputs, flags and seed, so rerunning a manifest
reproduces the output files byte for byte.
"""
import json
import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.core.codec import (
    assign_anchors,
    assign_fcos,
    direction_target,
    encode_outdoor,
    fcos_locations,
    generate_anchors,
)
from src.core.database import init_db, ledger_url, session_factory
from src.core.errors import ValidationError
from src.core.evaluation import (
    DISTANCE_THRESHOLDS,
    GroundTruthObject,
    distance_protocol,
    indoor_protocol,
    kitti_protocol,
)
from src.core.geometry import Box3D, CameraIntrinsics, look_at
from src.core.losses import PoseAngles, gradient_sweep, iou3d_loss_gradient
from src.core.manifest import RunManifest
from src.core.services import ManifestService
from src.core.stub_features import StubSpec
from src.core.suppression import Detection, rotated_nms
from src.core.voxelgrid import (
    VoxelGridSpec,
    aggregate,
    coverage_bev,
    load_volume,
    project_views,
    sample_views,
    save_volume,
)
from src.export.bev import BevFrame, render_bev_png, render_bev_svg, save_bev_png, save_bev_svg
from src.export.report import PROTOCOLS, distance_report, indoor_report, kitti_report, save_report
from src.formats.config import DatasetConfig, load_config, save_config
from src.formats.detections import DetectionSet, load_detections, parse_detections, save_detections
from src.formats.kitti import labels_to_ground_truth, parse_kitti_calib, parse_kitti_label
from src.formats.scene import SceneFile, load_scene, parse_scene, save_scene, stub_view

logger = logging.getLogger(__name__)

VOLUME_FILE = "volume.vxvl"
TARGETS_FILE = "targets.json"
NMS_FILE = "detections.json"
REPORT_FILE = "report.json"
GRADCHECK_FILE = "gradcheck.json"
SCENE_FILE = "scene.json"
BEV_SVG_FILE = "bev.svg"
BEV_PNG_FILE = "bev.png"

GRADCHECK_TOLERANCE = 1e-4

PathLike = Union[str, Path]
EvalScene = Tuple[List[Detection], List[GroundTruthObject]]


def resolve_config(name_or_path: Optional[str], fallback: Union[str, Callable[[], str]]) -> DatasetConfig:
    """``--config`` when given, otherwise the fallback preset; a callable fallback is called only then."""
    if name_or_path:
        return load_config(name_or_path)
    return load_config(fallback() if callable(fallback) else fallback)


def _write_json(doc, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def cmd_project(
    scene_path: PathLike,
    config: DatasetConfig,
    out_dir: PathLike,
    manifest: RunManifest,
    views: Optional[int] = None,
    seed: int = 0,
    workers: int = 1
) -> Path:
    """
    Project every view of a scene into the config's grid and average them.

    Args:
        scene_path: Scene document
        config: Dataset configuration (grid and sampling mode)
        out_dir: Output directory; receives ``volume.vxvl``
        manifest: Run manifest collecting stage timings
        views: Project only this many views, sampled with ``seed``
        seed: Seed for view sampling
        workers: Threads used for per-view projection

    Returns:
        Path: The written volume file
    """
    scene = load_scene(scene_path)
    spec = config.grid_spec()
    chosen = sample_views(scene.camera_views, views, seed)
    with manifest.stage("project"):
        per_view = project_views(
            list(tqdm(chosen, desc="views", disable=None)), spec, config.sampling, workers
        )
    for i, volume in enumerate(per_view):
        if volume.covered_voxels == 0:
            logger.warning(f"View {i} ({chosen[i].name or 'unnamed'}) does not see any voxel of the grid")
    with manifest.stage("aggregate"):
        volume = aggregate(per_view)
    logger.info(
        f"Projected {len(chosen)} views into {spec.shape} grid; "
        f"{volume.covered_voxels} of {spec.num_voxels} voxels covered"
    )
    return save_volume(volume, Path(out_dir) / VOLUME_FILE)


def outdoor_targets(scene: SceneFile, config: DatasetConfig) -> Dict:
    """Anchor assignment and encoded deltas of every positive anchor."""
    anchors = generate_anchors(config.grid_spec(), config.anchor_prior, config.anchor_rotations)
    gts = scene.boxes
    assignment = assign_anchors(anchors, gts, config.pos_iou, config.neg_iou)
    positives = []
    for a, g in assignment.positives():
        delta = encode_outdoor(gts[g], anchors[a])
        positives.append({
            "anchor": a,
            "gt": g,
            "class_id": scene.objects[g].class_id,
            "iou": float(assignment.max_iou[a]),
            "delta": list(delta.as_tuple()),
            "direction": int(direction_target(gts[g].theta, anchors[a].theta)),
        })
    counts = assignment.counts()
    logger.info(f"Outdoor targets: {counts['positive']} positive, {counts['negative']} negative, "
                f"{counts['ignored']} ignored anchors")
    return {"head": "outdoor", "num_anchors": len(anchors), "counts": counts, "positives": positives}


def indoor_targets(scene: SceneFile, config: DatasetConfig) -> Dict:
    """Anchor-free targets of every positive location."""
    spec = config.grid_spec()
    locations = fcos_locations(spec)
    targets = assign_fcos(
        scene.boxes, locations, spec, [o.class_id for o in scene.objects], config.rotation_free
    )
    positives = []
    for i, target in enumerate(targets):
        if not target.is_positive:
            continue
        loc = locations[i]
        positives.append({
            "location": i,
            "level": loc.level,
            "xyz": [loc.x, loc.y, loc.z],
            "offsets": list(target.offsets),
            "theta": target.theta,
            "centerness": target.centerness,
            "class_id": target.class_id,
        })
    counts = {"positive": len(positives), "negative": len(targets) - len(positives)}
    logger.info(f"Indoor targets: {counts['positive']} positive of {len(targets)} locations")
    return {"head": "indoor", "num_locations": len(locations), "counts": counts, "positives": positives}


def cmd_targets(
    scene_path: PathLike,
    config: DatasetConfig,
    out_dir: PathLike,
    manifest: RunManifest,
    head: Optional[str] = None
) -> Path:
    """Write ``targets.json`` for the outdoor (anchor) or indoor (anchor-free) head."""
    scene = load_scene(scene_path)
    head = head or config.head
    if head not in ("outdoor", "indoor"):
        raise ValidationError(f"Unknown head '{head}', expected 'outdoor' or 'indoor'")
    with manifest.stage("assign"):
        doc = outdoor_targets(scene, config) if head == "outdoor" else indoor_targets(scene, config)
    doc["scene_id"] = scene.scene_id
    return _write_json(doc, Path(out_dir) / TARGETS_FILE)


def cmd_nms(
    detections_path: PathLike,
    threshold: float,
    out_dir: PathLike,
    manifest: RunManifest
) -> Path:
    """Suppress overlapping detections scene by scene; kept detections are in descending score order per scene."""
    dets = load_detections(detections_path)
    kept: List[int] = []
    with manifest.stage("nms"):
        scene_index: Dict[str, List[int]] = {}
        for i, scene_id in enumerate(dets.scene_ids):
            scene_index.setdefault(scene_id, []).append(i)
        for indices in scene_index.values():
            keep = rotated_nms([dets.detections[i] for i in indices], threshold)
            kept.extend(indices[k] for k in keep)
    logger.info(f"NMS at IoU {threshold} kept {len(kept)} of {len(dets)} detections")
    return save_detections(dets.subset(kept), Path(out_dir) / NMS_FILE)


def default_protocol(config: DatasetConfig) -> str:
    if config.head == "indoor":
        return "indoor-map"
    return "distance" if config.name == "nuscenes" else "kitti-iou"


def load_ground_truth(
    gt_paths: Sequence[PathLike],
    config: DatasetConfig,
    calib_paths: Sequence[PathLike] = ()
) -> List[Tuple[str, List[GroundTruthObject]]]:
    """
    Ground truth per scene from scene documents or KITTI label files.

    KITTI labels (``.txt``) need a calibration file each, given in the same
    order. The scene id of a label file is its stem.
    """
    labels = [Path(p) for p in gt_paths if Path(p).suffix == ".txt"]
    if len(labels) != len(calib_paths):
        raise ValidationError(f"{len(labels)} KITTI label files need as many calib files, got {len(calib_paths)}")
    calibs = iter(calib_paths)
    scenes = []
    for raw_path in gt_paths:
        path = Path(raw_path)
        if path.suffix == ".txt":
            calib_path = Path(next(calibs))
            calib = parse_kitti_calib(calib_path.read_text(encoding="utf-8"), str(calib_path))
            label_rows = parse_kitti_label(path.read_text(encoding="utf-8"), str(path))
            scenes.append((path.stem, labels_to_ground_truth(label_rows, calib, config.classes)))
        else:
            scene = load_scene(path)
            scenes.append((scene.scene_id or path.stem, list(scene.objects)))
    return scenes


def pair_scenes(dets: DetectionSet, gt_scenes: Sequence[Tuple[str, List[GroundTruthObject]]]) -> List[EvalScene]:
    """
    Match detections to ground-truth scenes by scene id.

    Detections without a scene id belong to the only scene when there is
    exactly one.
    """
    grouped = dets.by_scene()
    if len(gt_scenes) == 1 and set(grouped) <= {"", gt_scenes[0][0]}:
        return [(list(dets.detections), gt_scenes[0][1])]
    known = {scene_id for scene_id, _ in gt_scenes}
    unknown = sorted(set(grouped) - known)
    if unknown:
        raise ValidationError(f"Detections refer to scenes without ground truth: {unknown}")
    return [(grouped.get(scene_id, []), gts) for scene_id, gts in gt_scenes]


def cmd_eval(
    detections_path: PathLike,
    gt_paths: Sequence[PathLike],
    config: DatasetConfig,
    out_dir: PathLike,
    manifest: RunManifest,
    protocol: Optional[str] = None,
    calib_paths: Sequence[PathLike] = ()
) -> Path:
    """
    Evaluate detections under one protocol and write ``report.json``.

    Protocols:
        kitti-iou: AP_3D and AP_BEV per difficulty at the config's IoU threshold
        distance: AP at center-distance thresholds plus TP errors
        indoor-map: per-class AP and mAP at the config's IoU thresholds
    """
    protocol = protocol or default_protocol(config)
    if protocol not in PROTOCOLS:
        raise ValidationError(f"Unknown protocol '{protocol}', expected one of {PROTOCOLS}")
    dets = load_detections(detections_path)
    scenes = pair_scenes(dets, load_ground_truth(gt_paths, config, calib_paths))
    with manifest.stage("eval"):
        if protocol == "kitti-iou":
            report = kitti_report(
                kitti_protocol(scenes, config.eval_iou, config.ap_mode), config.classes, config.eval_iou, config.name
            )
        elif protocol == "distance":
            reports = distance_protocol(
                scenes, DISTANCE_THRESHOLDS, config.tp_distance, config.ap_mode, config.aoe_mode
            )
            report = distance_report(reports, config.classes, config.tp_distance, config.name)
        else:
            report = indoor_report(indoor_protocol(scenes, config.indoor_iou, config.ap_mode), config.classes, config.name)
    report["num_scenes"] = len(scenes)
    report["num_detections"] = len(dets)
    return save_report(report, Path(out_dir) / REPORT_FILE)


def iou_loss_fd_spread(seed: int, pairs: int = 10) -> float:
    """
    Largest disagreement between IoU-loss gradients taken with two step sizes,
    over random overlapping box pairs.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        gt = Box3D(0.0, 0.0, 0.0, *rng.uniform(0.5, 2.0, size=3), float(rng.uniform(-math.pi, math.pi)))
        pred = Box3D(
            *rng.normal(scale=0.2, size=3), *rng.uniform(0.5, 2.0, size=3), float(rng.uniform(-math.pi, math.pi))
        )
        coarse = iou3d_loss_gradient(pred, gt, eps=1e-4)
        fine = iou3d_loss_gradient(pred, gt, eps=1e-5)
        worst = max(worst, float(np.max(np.abs(coarse - fine))))
    return worst


def cmd_gradcheck(
    out_dir: PathLike,
    manifest: RunManifest,
    seed: int = 0,
    points: int = 100,
    tolerance: float = GRADCHECK_TOLERANCE
) -> Path:
    """
    Finite-difference check of every analytic loss gradient.

    Writes ``gradcheck.json`` and then fails if any relative error exceeds
    ``tolerance``.

    Raises:
        ValidationError: If a gradient fails the check
    """
    with manifest.stage("gradcheck"):
        worst = gradient_sweep(seed, points)
        spread = iou_loss_fd_spread(seed)
    failed = sorted(name for name, error in worst.items() if error > tolerance)
    path = _write_json(
        {
            "seed": seed,
            "points": points,
            "tolerance": tolerance,
            "max_relative_error": worst,
            "iou3d_fd_spread": spread,
            "passed": not failed,
        },
        Path(out_dir) / GRADCHECK_FILE,
    )
    if failed:
        raise ValidationError(f"Gradient check failed for {', '.join(failed)}")
    return path


def _camera_image(config: DatasetConfig) -> Tuple[CameraIntrinsics, Tuple[int, int]]:
    if config.head == "indoor":
        width, height, focal = 640, 480, 520.0
    else:
        width, height, focal = 1248, 384, 720.0
    return CameraIntrinsics(focal, focal, width / 2.0, height / 2.0), (width, height)


def _camera_poses(spec: VoxelGridSpec, config: DatasetConfig, n_views: int, rng: np.random.Generator):
    """Eye and target points of synthetic cameras, all looking into the grid."""
    center = np.array([
        0.5 * (spec.x_min + spec.x_max), 0.5 * (spec.y_min + spec.y_max), 0.5 * (spec.z_min + spec.z_max)
    ])
    eye_z = spec.z_min + 0.75 * (spec.z_max - spec.z_min)
    poses = []
    for k in range(n_views):
        jitter = rng.uniform(-0.05, 0.05, size=3) * spec.s
        if config.forward_axis == "y":
            spread = (k - 0.5 * (n_views - 1)) * 0.1 * spec.s
            eye = np.array([center[0] + spread, spec.y_min - 0.5 * spec.s, eye_z]) + jitter
            target = center
        elif config.head == "outdoor":
            yaw = 2.0 * math.pi * k / n_views
            eye = np.array([center[0], center[1], eye_z]) + jitter
            target = eye + np.array([10.0 * math.cos(yaw), 10.0 * math.sin(yaw), center[2] - eye_z])
        else:
            yaw = 2.0 * math.pi * k / n_views
            radius = 0.45 * min(spec.x_max - spec.x_min, spec.y_max - spec.y_min)
            eye = np.array([center[0] + radius * math.cos(yaw), center[1] + radius * math.sin(yaw), eye_z]) + jitter
            target = center
        poses.append((eye, target))
    return poses


def _random_box(spec: VoxelGridSpec, config: DatasetConfig, rng: np.random.Generator) -> Box3D:
    if config.head == "outdoor":
        w, l, h, _ = config.anchor_prior
        w, l, h = (v * rng.uniform(0.9, 1.1) for v in (w, l, h))
    else:
        w, l = rng.uniform(0.3, 1.5, size=2)
        h = rng.uniform(0.3, min(1.5, spec.z_max - spec.z_min))
    margin = 0.5 * math.hypot(w, l)
    x = rng.uniform(spec.x_min + margin, spec.x_max - margin)
    y = rng.uniform(spec.y_min + margin, spec.y_max - margin)
    z = spec.z_min + 0.5 * h
    theta = 0.0 if config.rotation_free else float(rng.uniform(-math.pi, math.pi))
    return Box3D(float(x), float(y), float(z), float(w), float(h), float(l), theta)


def synth_scene(config: DatasetConfig, seed: int, n_views: int, n_objects: int, scene_id: str = "") -> SceneFile:
    """
    Generate a scene with cameras looking into the config's grid, stub
    features and random objects resting on the grid floor.
    """
    if n_views < 1:
        raise ValidationError(f"A synthetic scene needs at least one view, got {n_views}")
    if n_objects < 0:
        raise ValidationError(f"Object count must be non-negative, got {n_objects}")
    spec = config.grid_spec()
    rng = np.random.default_rng(seed)
    intrinsics, image_size = _camera_image(config)
    views = []
    for k, (eye, target) in enumerate(tqdm(_camera_poses(spec, config, n_views, rng), desc="synth", disable=None)):
        stub = StubSpec((config.stub_seed + seed * 1_000_003 + k) % 2 ** 64, config.stub_channels, config.stub_pattern)
        views.append(stub_view(intrinsics, look_at(eye, target), image_size, stub, config.feature_stride, f"view-{k}"))
    objects = [
        GroundTruthObject(_random_box(spec, config, rng), int(rng.integers(0, len(config.classes))))
        for _ in range(n_objects)
    ]
    layout = None
    if config.head == "indoor":
        layout = Box3D(
            0.5 * (spec.x_min + spec.x_max), 0.5 * (spec.y_min + spec.y_max), 0.5 * (spec.z_min + spec.z_max),
            spec.y_max - spec.y_min, spec.z_max - spec.z_min, spec.x_max - spec.x_min,
        )
    return SceneFile(
        views=views,
        objects=objects,
        grid=config.name,
        scene_id=scene_id or f"synth-{seed:04d}",
        layout=layout,
        pose=PoseAngles.from_extrinsics(views[0].view.extrinsics),
    )


def cmd_synth(
    config: DatasetConfig,
    out_dir: PathLike,
    manifest: RunManifest,
    seed: int = 0,
    n_views: int = 1,
    n_objects: int = 3
) -> Path:
    """Write a synthetic ``scene.json``; the file is re-read to check it validates."""
    with manifest.stage("synth"):
        scene = synth_scene(config, seed, n_views, n_objects)
        path = save_scene(scene, Path(out_dir) / SCENE_FILE)
    load_scene(path)
    logger.info(f"Synthesized scene '{scene.scene_id}' with {n_views} views and {n_objects} objects")
    return path


def _read_boxes_source(path: Path) -> Tuple[List[Box3D], List[Detection]]:
    """Ground-truth boxes of a scene document, or detections of a detections document."""
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except ValueError:
        doc = None
    if isinstance(doc, dict) and "detections" in doc:
        return [], list(parse_detections(text, str(path)).detections)
    return parse_scene(text, str(path)).boxes, []


def cmd_render_bev(
    input_path: PathLike,
    out_dir: PathLike,
    manifest: RunManifest,
    detections_path: Optional[PathLike] = None,
    config: Optional[DatasetConfig] = None,
    volume_path: Optional[PathLike] = None,
    png: bool = False
) -> Path:
    """
    Draw a scene's boxes and/or detections on the ground plane as ``bev.svg``.

    The window is the config's grid when a config is given, the volume's grid
    when a volume is given (which also adds coverage shading), and the boxes'
    extent otherwise.
    """
    gts, dets = _read_boxes_source(Path(input_path))
    if detections_path is not None:
        dets.extend(load_detections(detections_path).detections)
    spec, coverage = None, None
    if volume_path is not None:
        volume = load_volume(volume_path)
        spec, coverage = volume.spec, coverage_bev(volume)
    elif config is not None:
        spec = config.grid_spec()
    frame = BevFrame.from_grid(spec) if spec is not None else None
    with manifest.stage("render"):
        svg = render_bev_svg(gts, dets, frame, spec, coverage, title=Path(input_path).name)
        path = save_bev_svg(svg, Path(out_dir) / BEV_SVG_FILE)
        if png:
            save_bev_png(render_bev_png(gts, dets, frame, spec, coverage), Path(out_dir) / BEV_PNG_FILE)
    return path


def cmd_config(name_or_path: str, out_dir: PathLike) -> Path:
    """Export a preset (or a resolved config file) as ``<name>.ini``."""
    config = load_config(name_or_path)
    return save_config(config, Path(out_dir) / f"{config.name}.ini")


def record_in_ledger(manifest: RunManifest, ledger: PathLike) -> int:
    """Store a manifest in the ledger database, creating tables on first use."""
    url = ledger_url(ledger)
    init_db(url)
    db = session_factory(url)()
    try:
        return ManifestService.record_run(db, manifest).id
    finally:
        db.close()


def cmd_runs(ledger: PathLike, command: Optional[str] = None) -> List[str]:
    """One line per recorded run: id, command, config, seed, total ms, output directory."""
    url = ledger_url(ledger)
    init_db(url)
    db = session_factory(url)()
    try:
        lines = []
        for run in ManifestService.list_runs(db, command):
            lines.append(
                f"{run.id}\t{run.command}\t{run.config_name}\tseed={run.seed}\t"
                f"exit={run.exit_code}\t{run.total_ms:.1f} ms\t{run.output_dir}"
            )
        return lines
    finally:
        db.close()

