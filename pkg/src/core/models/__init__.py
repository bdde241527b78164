"""
Database models for the run ledger.
"""
from src.core.models.run_manifest import RunRecord, StageTiming

__all__ = [
    "RunRecord",
    "StageTiming",
]
