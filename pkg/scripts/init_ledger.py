"""
Run ledger initialization script.

Creates the ledger tables in a SQLite file (default: data/runs.db). Use
``alembic upgrade head`` instead when the ledger should carry migration
history.
"""
import argparse
import logging
import sys
from pathlib import Path

# Add the project root directory to the Python path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.core.database import DEFAULT_LEDGER, init_db, ledger_url  # noqa: E402

logger = logging.getLogger(__name__)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("path", nargs="?", default=str(DEFAULT_LEDGER), help="Ledger file")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    engine = init_db(ledger_url(args.path))
    logger.info(f"Ledger ready at {engine.url}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
