"""Run audit logging and reproducibility records."""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO

import structlog
from pydantic import BaseModel, Field

from coughkit.version import __version__

RUN_RECORD_NAME = "run_record.json"


class StageEvent(BaseModel):
    """Individual audit event."""

    event_id: str
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    event_type: str  # run_start, run_complete, stage, artifact
    run_id: str
    stage: Optional[str] = None  # segment, featurize, pretrain, ...
    success: bool = True
    error_message: Optional[str] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)

    def to_log_record(self) -> Dict[str, Any]:
        """Convert to structured log record format."""
        return {
            "event_id": self.event_id,
            "timestamp": self.timestamp.isoformat(),
            "event_type": self.event_type,
            "run_id": self.run_id,
            "stage": self.stage,
            "success": self.success,
            "error_message": self.error_message,
            "metadata": self.metadata,
        }


class RunSummary(BaseModel):
    """Summary of audit events for one run."""

    run_id: str
    command: str
    started_at: datetime
    completed_at: Optional[datetime] = None

    total_events: int = 0
    success_events: int = 0
    error_events: int = 0

    # Breakdown by stage
    stages: Dict[str, int] = Field(default_factory=dict)

    failures: List[str] = Field(default_factory=list)

    def add_event(self, event: StageEvent) -> None:
        """Add an event to the summary statistics."""
        self.total_events += 1
        if event.success:
            self.success_events += 1
        else:
            self.error_events += 1
            if event.error_message:
                self.failures.append(event.error_message)
        if event.stage:
            self.stages[event.stage] = self.stages.get(event.stage, 0) + 1

    def duration_seconds(self) -> Optional[float]:
        if self.completed_at is None:
            return None
        return (self.completed_at - self.started_at).total_seconds()


class RunRecord(BaseModel):
    """Everything needed to regenerate a run's artifacts."""

    command: str
    config: Dict[str, Any]
    config_hash: str
    seed: int
    version: str = __version__
    artifacts: Dict[str, str] = Field(default_factory=dict, description="Artifact path -> sha256")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunAuditLogger:
    """JSONL event stream per run plus the reproducibility record."""

    def __init__(self, out_dir: Path, enabled: bool = True) -> None:
        """Initialize audit logger.

        Args:
            out_dir: Run output directory; receives the audit file and run_record.json
            enabled: Whether the JSONL event stream is written
        """
        self.out_dir = Path(out_dir)
        self.enabled = enabled
        self.current_file: Optional[Path] = None
        self.file_handle: Optional[TextIO] = None
        self.summary: Optional[RunSummary] = None
        self.artifacts: Dict[str, Path] = {}
        self._event_counter = 0
        self._logger = structlog.get_logger(__name__)

    def start_run(self, command: str, run_id: Optional[str] = None) -> RunSummary:
        """Open the audit file and log the run start event."""
        run_id = run_id or datetime.now(timezone.utc).strftime("%Y%m%d_%H%M%S_%f")
        self.summary = RunSummary(run_id=run_id, command=command, started_at=datetime.now(timezone.utc))
        self.artifacts = {}
        self._event_counter = 0

        self.out_dir.mkdir(parents=True, exist_ok=True)
        if self.enabled:
            self._close_current_file()
            self.current_file = self.out_dir / f"audit_{run_id}.jsonl"
            self.file_handle = self.current_file.open("w", encoding="utf-8")

        self.log_event("run_start", metadata={"command": command, "version": __version__})
        self._logger.info("Started run", run_id=run_id, command=command, audit_file=str(self.current_file))
        return self.summary

    def log_event(
        self,
        event_type: str,
        stage: Optional[str] = None,
        success: bool = True,
        error_message: Optional[str] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> Optional[StageEvent]:
        if self.summary is None:
            return None
        self._event_counter += 1
        event = StageEvent(
            event_id=f"{self.summary.run_id}_{self._event_counter:05d}",
            event_type=event_type,
            run_id=self.summary.run_id,
            stage=stage,
            success=success,
            error_message=error_message,
            metadata=dict(metadata or {}),
        )
        self.summary.add_event(event)
        self._write_event_to_file(event)
        return event

    def log_stage(self, stage: str, **metadata: Any) -> None:
        self.log_event("stage", stage=stage, metadata=metadata)

    def record_artifact(self, path: Path, stage: Optional[str] = None) -> str:
        """Hash an artifact and remember it for the run record."""
        path = Path(path)
        digest = sha256_file(path)
        self.artifacts[self._relative(path)] = path
        self.log_event("artifact", stage=stage, metadata={"path": self._relative(path), "sha256": digest})
        return digest

    def complete_run(
        self,
        config: Dict[str, Any],
        config_hash: str,
        seed: int,
        success: bool = True,
        error_message: Optional[str] = None,
    ) -> Optional[RunRecord]:
        """Log completion, write run_record.json and close the audit file.

        The record is only written for successful runs.
        """
        if self.summary is None:
            return None
        self.summary.completed_at = datetime.now(timezone.utc)
        self.log_event(
            "run_complete",
            success=success,
            error_message=error_message,
            metadata={
                "total_events": self.summary.total_events,
                "duration_seconds": self.summary.duration_seconds(),
            },
        )

        record: Optional[RunRecord] = None
        if success:
            record = RunRecord(
                command=self.summary.command,
                config=config,
                config_hash=config_hash,
                seed=seed,
                artifacts={name: sha256_file(path) for name, path in sorted(self.artifacts.items())},
            )
            record_path = self.out_dir / RUN_RECORD_NAME
            record_path.write_text(json.dumps(record.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")

        self._close_current_file()
        self._logger.info(
            "Completed run",
            run_id=self.summary.run_id,
            success=success,
            total_events=self.summary.total_events,
            n_artifacts=len(self.artifacts),
        )
        return record

    def _relative(self, path: Path) -> str:
        try:
            return path.resolve().relative_to(self.out_dir.resolve()).as_posix()
        except ValueError:
            return str(path)

    def _write_event_to_file(self, event: StageEvent) -> None:
        if not self.file_handle:
            return
        try:
            self.file_handle.write(json.dumps(event.to_log_record(), default=str) + "\n")
            self.file_handle.flush()
        except OSError as e:
            self._logger.error("Failed to write audit event to file", error=str(e))

    def _close_current_file(self) -> None:
        if self.file_handle:
            try:
                self.file_handle.close()
            except OSError as e:
                self._logger.error("Failed to close audit file", error=str(e))
            self.file_handle = None
