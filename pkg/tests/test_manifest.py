"""Tests for manifest parsing and validation."""

import pytest

from coughkit.core.manifest import ManifestRow, Split, parse_manifest, parse_manifest_rows, write_manifest
from coughkit.exceptions import ManifestError


def _write(tmp_path, text: str):
    path = tmp_path / "manifest.csv"
    path.write_text(text, encoding="utf-8")
    return path


class TestParseManifest:
    """Test manifest validation."""

    def test_valid(self, tmp_path):
        """Test rows, counts and subjects of a valid manifest."""
        path = _write(
            tmp_path,
            "path,label,subject_id,split\n"
            "a.wav,0,s1,train\n"
            "b.wav,1,s2,train\n"
            "c.wav,1,s2,train\n"
            "d.wav,0,s3,test\n",
        )

        manifest = parse_manifest(path)

        assert len(manifest) == 4
        assert manifest.counts(Split.TRAIN) == (1, 2)
        assert manifest.counts(Split.TEST) == (1, 0)
        assert manifest.subjects(Split.TRAIN) == ["s1", "s2"]
        assert manifest.rows[0].line_number == 2
        assert not manifest.has_scores

    def test_relative_paths_resolve_against_manifest(self, tmp_path):
        """Test that relative paths are anchored at the manifest's directory."""
        path = _write(tmp_path, "path,label,subject_id,split\naudio/a.wav,0,s1,train\n")

        manifest = parse_manifest(path)

        assert manifest.rows[0].path == tmp_path.resolve() / "audio" / "a.wav"

    def test_absolute_paths_kept(self, tmp_path):
        """Test that absolute paths are used as is."""
        target = tmp_path / "x" / "a.wav"
        manifest = parse_manifest(_write(tmp_path, f"path,label,subject_id,split\n{target},1,s1,test\n"))

        assert manifest.rows[0].path == target

    def test_bad_label(self, tmp_path):
        """Test that a non-binary label is reported with its line."""
        path = _write(tmp_path, "path,label,subject_id,split\na.wav,2,s1,train\n")

        with pytest.raises(ManifestError) as exc_info:
            parse_manifest(path)

        assert exc_info.value.line_number == 2
        assert exc_info.value.value == "2"

    def test_bad_split(self, tmp_path):
        """Test that unknown splits are rejected."""
        with pytest.raises(ManifestError):
            parse_manifest(_write(tmp_path, "path,label,subject_id,split\na.wav,0,s1,validation\n"))

    def test_subject_in_both_splits(self, tmp_path):
        """Test that a subject may not cross splits."""
        path = _write(tmp_path, "path,label,subject_id,split\na.wav,0,s1,train\nb.wav,0,s1,test\n")

        with pytest.raises(ManifestError) as exc_info:
            parse_manifest(path)

        assert exc_info.value.line_number == 3

    def test_conflicting_subject_labels(self, tmp_path):
        """Test that a subject has one label."""
        with pytest.raises(ManifestError):
            parse_manifest(_write(tmp_path, "path,label,subject_id,split\na.wav,0,s1,train\nb.wav,1,s1,train\n"))

    def test_duplicate_path(self, tmp_path):
        """Test that a path appears once."""
        path = _write(tmp_path, "path,label,subject_id,split\na.wav,0,s1,train\na.wav,0,s2,train\n")

        with pytest.raises(ManifestError) as exc_info:
            parse_manifest(path)

        assert exc_info.value.context["first_line"] == 2

    def test_unknown_column(self, tmp_path):
        """Test that the header is checked."""
        with pytest.raises(ManifestError) as exc_info:
            parse_manifest(_write(tmp_path, "path,label,subject_id,split,speaker\na.wav,0,s1,train,x\n"))

        assert exc_info.value.line_number == 1

    def test_missing_column(self, tmp_path):
        """Test that all required columns must be present."""
        with pytest.raises(ManifestError):
            parse_manifest(_write(tmp_path, "path,label,split\na.wav,0,train\n"))

    def test_scores(self, tmp_path):
        """Test the optional score column."""
        manifest = parse_manifest(
            _write(tmp_path, "path,label,subject_id,split,score\na.wav,0,s1,test,0.25\nb.wav,1,s2,test,\n")
        )

        assert manifest.has_scores
        assert manifest.rows[0].score == 0.25
        assert manifest.rows[1].score is None

    def test_score_out_of_range(self, tmp_path):
        """Test that scores must be probabilities."""
        with pytest.raises(ManifestError):
            parse_manifest(_write(tmp_path, "path,label,subject_id,split,score\na.wav,0,s1,test,1.5\n"))

    def test_missing_file(self, tmp_path):
        """Test that an unreadable manifest raises a manifest error."""
        with pytest.raises(ManifestError):
            parse_manifest(tmp_path / "absent.csv")

    def test_empty_manifest(self, tmp_path):
        """Test that a header-only manifest has no rows."""
        assert len(parse_manifest_rows(["path,label,subject_id,split"], base_dir=tmp_path)) == 0


class TestWriteManifest:
    """Test writing manifests."""

    def test_written_manifest_parses_back(self, tmp_path):
        """Test that written rows parse to the same rows with relative paths."""
        out = tmp_path / "runs" / "segments_manifest.csv"
        rows = [
            ManifestRow(path=out.parent / "segments" / "a.wav", label=1, subject_id="s1", split=Split.TRAIN, line_number=2),
            ManifestRow(path=out.parent / "segments" / "b.wav", label=0, subject_id="s2", split=Split.TEST, line_number=3, score=0.5),
        ]

        write_manifest(out, rows, with_scores=True)
        parsed = parse_manifest(out)

        assert out.read_text(encoding="utf-8").splitlines()[1].startswith("segments/a.wav,1,s1,train")
        assert [(r.path, r.label, r.subject_id, r.split, r.score) for r in parsed.rows] == [
            (out.parent.resolve() / "segments" / "a.wav", 1, "s1", Split.TRAIN, None),
            (out.parent.resolve() / "segments" / "b.wav", 0, "s2", Split.TEST, 0.5),
        ]
