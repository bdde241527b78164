"""
Service for recording runs in the ledger.

This module provides the service layer between run manifests and the
SQLAlchemy ledger models. It implements:

- Recording a finished run with its stage timings
- Listing and filtering recorded runs
- Converting stored rows back into manifests
"""
import logging
from typing import List, Optional

from sqlalchemy.orm import Session

from src.core.manifest import RunManifest, StageTime
from src.core.models import RunRecord, StageTiming
from src.utils.db_utils import add_and_commit, delete_and_commit, get_all, get_by_id

logger = logging.getLogger(__name__)


class ManifestService:
    """
    Service class for the run ledger.

    The service is implemented using static methods and takes the session as
    its first argument, so callers decide how sessions are scoped.

    Example:
        >>> db = session_factory(ledger_url("runs.db"))()
        >>> record = ManifestService.record_run(db, manifest)
        >>> ManifestService.list_runs(db, command="eval")
    """

    @staticmethod
    def record_run(db: Session, manifest: RunManifest) -> RunRecord:
        """
        Store a manifest as a run row with one timing row per stage.

        Args:
            db: Database session
            manifest: Finished run manifest

        Returns:
            RunRecord: The stored run, refreshed with its id
        """
        run = RunRecord(
            command=manifest.command,
            config_name=manifest.config,
            seed=str(manifest.seed),
            output_dir=manifest.out_dir,
            exit_code=manifest.exit_code,
        )
        run.inputs = manifest.inputs
        run.timings = [
            StageTiming(position=i, stage=t.stage, duration_ms=t.ms) for i, t in enumerate(manifest.timings)
        ]
        run = add_and_commit(db, run)
        logger.info(f"Recorded run {run.id} ({run.command}) with {len(manifest.timings)} stages")
        return run

    @staticmethod
    def get_run(db: Session, run_id: int) -> Optional[RunRecord]:
        return get_by_id(db, RunRecord, run_id)

    @staticmethod
    def list_runs(db: Session, command: Optional[str] = None) -> List[RunRecord]:
        """Recorded runs in insertion order, optionally only one command."""
        filters = {"command": command} if command else {}
        return sorted(get_all(db, RunRecord, **filters), key=lambda r: r.id)

    @staticmethod
    def to_manifest(run: RunRecord) -> RunManifest:
        """Rebuild the manifest a run row was recorded from."""
        return RunManifest(
            command=run.command,
            config=run.config_name,
            inputs=run.inputs,
            seed=int(run.seed or 0),
            out_dir=run.output_dir,
            timings=[StageTime(t.stage, t.duration_ms) for t in run.timings],
            exit_code=run.exit_code or 0,
        )

    @staticmethod
    def delete_run(db: Session, run_id: int) -> bool:
        """
        Delete a run and its timings.

        Raises:
            ValueError: If the run does not exist
        """
        run = get_by_id(db, RunRecord, run_id)
        if not run:
            raise ValueError(f"Run with ID {run_id} not found")
        return delete_and_commit(db, run)
