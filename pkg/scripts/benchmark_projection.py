"""
Projection benchmark.

Projects a synthetic multi-view scene into a preset grid and aggregates it,
repeating a few times and reporting the best wall-clock time per stage.
The default (50 views on the ScanNet grid, 16 channels) should finish well
under two seconds on a four-core desktop.
"""
import argparse
import logging
import sys
import time
from pathlib import Path

# Add the project root directory to the Python path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.cli.commands import synth_scene  # noqa: E402
from src.core.voxelgrid import aggregate, project_views  # noqa: E402
from src.formats.config import load_config  # noqa: E402

logger = logging.getLogger(__name__)


def main() -> int:
    parser = argparse.ArgumentParser(description="Benchmark multi-view projection and aggregation")
    parser.add_argument("--config", default="scannet")
    parser.add_argument("--views", type=int, default=50)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    config = load_config(args.config)
    spec = config.grid_spec()
    views = synth_scene(config, args.seed, args.views, 0).camera_views
    best_project, best_aggregate = float("inf"), float("inf")
    for _ in range(args.repeats):
        start = time.perf_counter()
        per_view = project_views(views, spec, config.sampling, args.workers)
        mid = time.perf_counter()
        aggregate(per_view)
        end = time.perf_counter()
        best_project = min(best_project, mid - start)
        best_aggregate = min(best_aggregate, end - mid)

    logger.info(
        f"{args.views} views on {config.name} grid {spec.shape}: "
        f"project {best_project * 1000:.1f} ms, aggregate {best_aggregate * 1000:.1f} ms, "
        f"total {(best_project + best_aggregate) * 1000:.1f} ms"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
