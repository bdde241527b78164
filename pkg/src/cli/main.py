"""
Command-line entry point.

Usage examples::

    voxeldet synth --config scannet --views 8 --seed 1 --out runs/synth
    voxeldet project runs/synth/scene.json --config scannet --out runs/volume
    voxeldet targets runs/synth/scene.json --config scannet --head indoor --out runs/targets
    voxeldet nms dets.json --threshold 0.25 --out runs/nms
    voxeldet eval runs/nms/detections.json runs/synth/scene.json --protocol indoor-map --out runs/eval
    voxeldet gradcheck --out runs/gradcheck
    voxeldet render-bev runs/synth/scene.json --dets runs/nms/detections.json --out runs/bev
    voxeldet runs --ledger data/runs.db

Exit codes: 0 success, 2 validation error, 3 I/O error.
"""
import argparse
import logging
import sys
from typing import List, Optional

from sqlalchemy.exc import SQLAlchemyError

from src.cli import commands
from src.core.errors import ParseError, ValidationError
from src.core.manifest import RunManifest
from src.export.report import PROTOCOLS
from src.formats.config import load_config
from src.formats.scene import load_scene

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _common() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="Preset name (kitti, nuscenes, sunrgbd, scannet) or INI file")
    parent.add_argument("--seed", type=_seed, default=0, help="Seed for every random choice (default: 0)")
    parent.add_argument("--out", default=".", help="Output directory (default: current directory)")
    parent.add_argument("--ledger", help="SQLite run ledger to record this run in")
    parent.add_argument("--verbose", "-v", action="store_true", help="Log at DEBUG level")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="voxeldet", description="Image-to-voxel 3D detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", parents=[common], help="Project a scene's views into a voxel volume")
    p.add_argument("scene")
    p.add_argument("--views", type=int, help="Use only this many views, sampled with --seed")
    p.add_argument("--workers", type=int, default=1, help="Threads for per-view projection")

    p = sub.add_parser("targets", parents=[common], help="Assign and encode training targets")
    p.add_argument("scene")
    p.add_argument("--head", choices=("outdoor", "indoor"), help="Detection head (default: from config)")

    p = sub.add_parser("nms", parents=[common], help="Rotated non-maximum suppression")
    p.add_argument("detections")
    p.add_argument("--threshold", type=float, help="IoU threshold (default: from config)")

    p = sub.add_parser("eval", parents=[common], help="Evaluate detections against ground truth")
    p.add_argument("detections")
    p.add_argument("ground_truth", nargs="+", help="Scene documents or KITTI label files")
    p.add_argument("--protocol", choices=PROTOCOLS, help="Metric protocol (default: from config)")
    p.add_argument("--calib", nargs="*", default=[], help="KITTI calib files, one per label file")

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference check of loss gradients")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--threshold", type=float, default=commands.GRADCHECK_TOLERANCE, help="Relative tolerance")

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic scene")
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--objects", type=int, default=3)

    p = sub.add_parser("render-bev", parents=[common], help="Draw boxes on the ground plane")
    p.add_argument("input", help="Scene document or detections document")
    p.add_argument("--dets", help="Detections to overlay")
    p.add_argument("--volume", help="Voxel volume whose coverage is shaded")
    p.add_argument("--png", action="store_true", help="Also write a PNG")

    p = sub.add_parser("config", parents=[common], help="Export a preset as an INI file")
    p.add_argument("name")

    p = sub.add_parser("runs", parents=[common], help="List runs recorded in a ledger")
    p.add_argument("--command", dest="filter_command", help="Only runs of this command")
    return parser


def _inputs(args: argparse.Namespace) -> List[str]:
    names = ("scene", "detections", "input", "name", "dets", "volume")
    paths = [getattr(args, n) for n in names if getattr(args, n, None)]
    paths.extend(getattr(args, "ground_truth", None) or [])
    paths.extend(getattr(args, "calib", None) or [])
    return [str(p) for p in paths]


def run(args: argparse.Namespace, manifest: RunManifest) -> None:
    """Dispatch to the command implementation."""
    command = args.command
    config = None
    if command == "project":
        config = commands.resolve_config(args.config, lambda: _scene_grid(args.scene))
        commands.cmd_project(args.scene, config, args.out, manifest, args.views, args.seed, args.workers)
    elif command == "targets":
        config = commands.resolve_config(args.config, lambda: _scene_grid(args.scene))
        commands.cmd_targets(args.scene, config, args.out, manifest, args.head)
    elif command == "nms":
        threshold = args.threshold
        if threshold is None:
            threshold = commands.resolve_config(args.config, "kitti").nms_iou
        commands.cmd_nms(args.detections, threshold, args.out, manifest)
    elif command == "eval":
        config = commands.resolve_config(args.config, "kitti")
        commands.cmd_eval(args.detections, args.ground_truth, config, args.out, manifest, args.protocol, args.calib)
    elif command == "gradcheck":
        commands.cmd_gradcheck(args.out, manifest, args.seed, args.points, args.threshold)
    elif command == "synth":
        config = commands.resolve_config(args.config, "scannet")
        commands.cmd_synth(config, args.out, manifest, args.seed, args.views, args.objects)
    elif command == "render-bev":
        config = load_config(args.config) if args.config else None
        commands.cmd_render_bev(args.input, args.out, manifest, args.dets, config, args.volume, args.png)
    elif command == "config":
        commands.cmd_config(args.name, args.out)
    if config is not None:
        manifest.config = args.config or config.name


def _scene_grid(scene_path: str) -> str:
    """Grid preset named by a scene document, used when --config is absent."""
    return load_scene(scene_path).grid


def _fail(kind: str, error: Exception, code: int) -> int:
    message = f"error: {kind}: {error}"
    logger.error(message)
    print(message, file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    if args.command == "runs":
        if not args.ledger:
            return _fail("validation", ValidationError("runs needs --ledger"), EXIT_VALIDATION)
        try:
            for line in commands.cmd_runs(args.ledger, args.filter_command):
                print(line)
        except (OSError, SQLAlchemyError) as e:
            return _fail("io", e, EXIT_IO)
        return EXIT_OK

    manifest = RunManifest(
        command=args.command,
        config=args.config or "",
        inputs=_inputs(args),
        seed=args.seed,
        out_dir=str(args.out),
    )
    code = EXIT_OK
    try:
        run(args, manifest)
        manifest.write()
    except ParseError as e:
        code = _fail("parse", e, EXIT_VALIDATION)
    except ValidationError as e:
        code = _fail("validation", e, EXIT_VALIDATION)
    except OSError as e:
        code = _fail("io", e, EXIT_IO)

    manifest.exit_code = code
    if args.ledger:
        try:
            run_id = commands.record_in_ledger(manifest, args.ledger)
            logger.info(f"Recorded run {run_id} in {args.ledger}")
        except (OSError, SQLAlchemyError) as e:
            return _fail("io", e, EXIT_IO)
    if code == EXIT_OK:
        logger.info(f"{args.command} finished in {manifest.total_ms:.1f} ms")
    return code


if __name__ == "__main__":
    sys.exit(main())
