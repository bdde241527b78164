"""
Services operating on the run ledger.
"""
from src.core.services.manifest_service import ManifestService

__all__ = [
    "ManifestService",
]
