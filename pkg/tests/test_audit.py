"""Tests for run audit logging."""

import hashlib
import json

from coughkit.audit.logger import RUN_RECORD_NAME, RunAuditLogger, sha256_file


def _events(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


class TestRunAuditLogger:
    """Test the JSONL event stream and run record."""

    def test_events_written(self, tmp_path):
        """Test that start, stage and completion events reach the audit file."""
        audit = RunAuditLogger(tmp_path)
        audit.start_run("segment", run_id="r1")
        audit.log_stage("segment", n_segments=3)
        audit.complete_run(config={"seed": 1}, config_hash="abc", seed=1)

        events = _events(tmp_path / "audit_r1.jsonl")

        assert [e["event_type"] for e in events] == ["run_start", "stage", "run_complete"]
        assert events[1]["metadata"] == {"n_segments": 3}
        assert events[0]["event_id"] == "r1_00001"

    def test_artifact_hash(self, tmp_path):
        """Test that artifacts are recorded with their sha256 and relative path."""
        artifact = tmp_path / "out" / "model.ckpt"
        artifact.parent.mkdir()
        artifact.write_bytes(b"weights")
        audit = RunAuditLogger(tmp_path)
        audit.start_run("finetune", run_id="r2")

        digest = audit.record_artifact(artifact, stage="finetune")
        record = audit.complete_run(config={"seed": 5}, config_hash="h", seed=5)

        assert digest == hashlib.sha256(b"weights").hexdigest()
        assert record.artifacts == {"out/model.ckpt": digest}
        on_disk = json.loads((tmp_path / RUN_RECORD_NAME).read_text(encoding="utf-8"))
        assert on_disk["config_hash"] == "h"
        assert on_disk["seed"] == 5
        assert on_disk["command"] == "finetune"

    def test_failed_run_has_no_record(self, tmp_path):
        """Test that a failed run logs the error but writes no run record."""
        audit = RunAuditLogger(tmp_path)
        audit.start_run("pretrain", run_id="r3")

        record = audit.complete_run(config={}, config_hash="h", seed=0, success=False, error_message="boom")

        assert record is None
        assert not (tmp_path / RUN_RECORD_NAME).exists()
        last = _events(tmp_path / "audit_r3.jsonl")[-1]
        assert last["success"] is False
        assert last["error_message"] == "boom"
        assert audit.summary.error_events == 1

    def test_disabled(self, tmp_path):
        """Test that a disabled logger writes no event file but still writes the record."""
        audit = RunAuditLogger(tmp_path, enabled=False)
        audit.start_run("evaluate", run_id="r4")
        audit.complete_run(config={}, config_hash="h", seed=0)

        assert not list(tmp_path.glob("audit_*.jsonl"))
        assert (tmp_path / RUN_RECORD_NAME).exists()

    def test_events_before_start_ignored(self, tmp_path):
        """Test that logging before start_run is a no-op."""
        audit = RunAuditLogger(tmp_path)

        assert audit.log_event("stage") is None
        assert audit.complete_run(config={}, config_hash="h", seed=0) is None


class TestSha256File:
    """Test file hashing."""

    def test_matches_hashlib(self, tmp_path):
        """Test against hashing the bytes directly."""
        path = tmp_path / "a.bin"
        data = bytes(range(256)) * 5000
        path.write_bytes(data)

        assert sha256_file(path) == hashlib.sha256(data).hexdigest()
