"""Dataset manifest parsing and validation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import structlog

from coughkit.exceptions import ManifestError
from coughkit.utils.sanitize import sanitize_log_input

logger = structlog.get_logger(__name__)

REQUIRED_COLUMNS = ("path", "label", "subject_id", "split")
OPTIONAL_COLUMNS = ("score",)


class Split(str, Enum):
    """Dataset partition."""
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class ManifestRow:
    """One labeled recording (or segment, or feature file)."""

    path: Path
    label: int
    subject_id: str
    split: Split
    line_number: int
    score: Optional[float] = None


@dataclass
class DatasetManifest:
    """Validated manifest: unique paths, subject-disjoint splits, one label per subject."""

    rows: List[ManifestRow]
    source: Optional[Path] = None
    has_scores: bool = False
    _by_split: Dict[Split, List[ManifestRow]] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        for split in Split:
            self._by_split[split] = [row for row in self.rows if row.split == split]

    def __len__(self) -> int:
        return len(self.rows)

    def split(self, split: Split) -> List[ManifestRow]:
        return list(self._by_split[split])

    def counts(self, split: Split) -> Tuple[int, int]:
        """(#negative, #positive) rows in a split."""
        rows = self._by_split[split]
        n_pos = sum(row.label for row in rows)
        return len(rows) - n_pos, n_pos

    def subjects(self, split: Optional[Split] = None) -> List[str]:
        rows = self.rows if split is None else self._by_split[split]
        return list(dict.fromkeys(row.subject_id for row in rows))


def _fail(message: str, line_number: int, value: str, **context: object) -> ManifestError:
    return ManifestError(
        f"{message} (line {line_number})",
        line_number=line_number,
        value=sanitize_log_input(value),
        **context,
    )


def parse_manifest_rows(lines: Iterable[str], base_dir: Path, source: Optional[Path] = None) -> DatasetManifest:
    """Validate manifest CSV lines; relative paths resolve against base_dir.

    Raises:
        ManifestError: On a bad header, bad value, duplicate path, subject in two
            splits or conflicting labels within a subject
    """
    reader = csv.DictReader(lines)
    header = tuple(name.strip() for name in (reader.fieldnames or ()))
    missing = [col for col in REQUIRED_COLUMNS if col not in header]
    unknown = [col for col in header if col not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
    if missing or unknown:
        raise ManifestError(
            "Manifest header must be path,label,subject_id,split[,score]",
            line_number=1,
            value=",".join(header),
            missing=missing,
            unknown=unknown,
        )
    has_scores = "score" in header

    rows: List[ManifestRow] = []
    seen_paths: Dict[Path, int] = {}
    subject_split: Dict[str, Tuple[Split, int]] = {}
    subject_label: Dict[str, Tuple[int, int]] = {}

    for record in reader:
        line = reader.line_num
        values = {key.strip(): (value or "").strip() for key, value in record.items() if key is not None}

        raw_path = values["path"]
        if not raw_path:
            raise _fail("Empty path", line, raw_path)
        path = Path(raw_path)
        if not path.is_absolute():
            path = base_dir / path

        if values["label"] not in ("0", "1"):
            raise _fail("Label must be 0 or 1", line, values["label"])
        label = int(values["label"])

        try:
            split = Split(values["split"])
        except ValueError:
            raise _fail("Split must be train or test", line, values["split"]) from None

        subject = values["subject_id"]
        if not subject:
            raise _fail("Empty subject_id", line, subject)

        score: Optional[float] = None
        if has_scores and values.get("score"):
            try:
                score = float(values["score"])
            except ValueError:
                raise _fail("Score is not a number", line, values["score"]) from None
            if not 0.0 <= score <= 1.0:
                raise _fail("Score must lie in [0, 1]", line, values["score"])

        if path in seen_paths:
            raise _fail("Duplicate path", line, raw_path, first_line=seen_paths[path])
        seen_paths[path] = line

        if subject in subject_split and subject_split[subject][0] != split:
            raise _fail(
                f"Subject {sanitize_log_input(subject)} appears in both splits",
                line,
                subject,
                first_line=subject_split[subject][1],
            )
        subject_split.setdefault(subject, (split, line))

        if subject in subject_label and subject_label[subject][0] != label:
            raise _fail(
                f"Subject {sanitize_log_input(subject)} has conflicting labels",
                line,
                subject,
                first_line=subject_label[subject][1],
            )
        subject_label.setdefault(subject, (label, line))

        rows.append(ManifestRow(path=path, label=label, subject_id=subject, split=split, line_number=line, score=score))

    manifest = DatasetManifest(rows=rows, source=source, has_scores=has_scores)
    logger.debug(
        "Parsed manifest",
        source=sanitize_log_input(str(source)) if source else None,
        n_rows=len(rows),
        n_subjects=len(subject_split),
    )
    return manifest


def parse_manifest(path: Path) -> DatasetManifest:
    """Read and validate a UTF-8 CSV manifest.

    Raises:
        ManifestError: If the file cannot be read or violates an invariant
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ManifestError(f"Cannot read manifest: {e}", value=sanitize_log_input(str(path))) from e
    return parse_manifest_rows(text.splitlines(), base_dir=path.parent.resolve(), source=path)


def write_manifest(path: Path, rows: Iterable[ManifestRow], with_scores: bool = False) -> Path:
    """Write rows as a manifest; paths are written relative to the manifest's directory when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    columns = list(REQUIRED_COLUMNS) + (["score"] if with_scores else [])
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            try:
                shown = row.path.resolve().relative_to(base).as_posix()
            except ValueError:
                shown = str(row.path)
            record = [shown, str(row.label), row.subject_id, row.split.value]
            if with_scores:
                record.append("" if row.score is None else repr(row.score))
            writer.writerow(record)
    return path
