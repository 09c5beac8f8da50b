"""Run audit log and reproducibility record."""

from coughkit.audit.logger import (
    RUN_RECORD_NAME,
    RunAuditLogger,
    RunRecord,
    RunSummary,
    StageEvent,
    sha256_file,
)

__all__ = [
    "RUN_RECORD_NAME",
    "RunAuditLogger",
    "RunRecord",
    "RunSummary",
    "StageEvent",
    "sha256_file",
]
