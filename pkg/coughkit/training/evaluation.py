"""AUROC, subject-level score aggregation and multi-seed reports."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy.stats import rankdata

from coughkit.config.base_models import AggregationMode
from coughkit.exceptions import EvaluationError
from coughkit.utils.sanitize import sanitize_log_input

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class ScoredSample:
    """Positive-class probability of one segment."""

    subject_id: str
    segment_score: float
    label: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.segment_score) or not 0.0 <= self.segment_score <= 1.0:
            raise EvaluationError(
                "Score must be finite and in [0, 1]",
                subject_id=sanitize_log_input(self.subject_id),
                score=self.segment_score,
            )
        if self.label not in (0, 1):
            raise EvaluationError("Label must be 0 or 1", subject_id=sanitize_log_input(self.subject_id), label=self.label)


@dataclass(frozen=True)
class SubjectScore:
    subject_id: str
    score: float
    label: int


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC from midrank sums; tied pairs count one half.

    Raises:
        EvaluationError: If only one class is present or lengths differ
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise EvaluationError("scores and labels must be 1-D of equal length", scores=s.shape, labels=y.shape)
    if not np.all(np.isin(y, (0, 1))):
        raise EvaluationError("Labels must be 0 or 1")
    positive = y == 1
    n_pos = int(positive.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUROC needs both classes", n_pos=n_pos, n_neg=n_neg)

    ranks = rankdata(s, method="average")
    u = float(ranks[positive].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def aggregate_by_subject(samples: Sequence[ScoredSample]) -> List[SubjectScore]:
    """Mean segment score per subject, in order of first appearance.

    Raises:
        EvaluationError: If a subject's segments carry different labels
    """
    grouped: Dict[str, List[float]] = {}
    labels: Dict[str, int] = {}
    for sample in samples:
        known = labels.setdefault(sample.subject_id, sample.label)
        if known != sample.label:
            raise EvaluationError(
                f"Subject {sanitize_log_input(sample.subject_id)} has conflicting labels",
                subject_id=sanitize_log_input(sample.subject_id),
            )
        grouped.setdefault(sample.subject_id, []).append(sample.segment_score)
    return [
        SubjectScore(subject_id=subject, score=sum(values) / len(values), label=labels[subject])
        for subject, values in grouped.items()
    ]


def evaluate_samples(samples: Sequence[ScoredSample], aggregation: AggregationMode) -> Tuple[float, int, int]:
    """(AUROC, n_pos, n_neg) at the requested level; counts are subjects under subject_mean."""
    if aggregation == AggregationMode.SUBJECT_MEAN:
        subjects = aggregate_by_subject(samples)
        scores = [s.score for s in subjects]
        labels = [s.label for s in subjects]
    else:
        scores = [s.segment_score for s in samples]
        labels = [s.label for s in samples]
    n_pos = sum(labels)
    return auroc(scores, labels), n_pos, len(labels) - n_pos


class EvalReport(BaseModel):
    """Per-seed and mean AUROC; failed seeds have no value and are excluded from the mean."""

    seeds: List[int] = Field(description="Seeds in run order")
    per_seed_auroc: List[Optional[float]] = Field(description="AUROC per seed, null when the run failed")
    mean_auroc: Optional[float] = Field(description="Arithmetic mean over successful seeds")
    n_successful: int = Field(description="Seeds contributing to the mean")
    failed_seeds: List[int] = Field(default_factory=list, description="Seeds whose run raised")
    n_pos: int = Field(0, description="Positive subjects (or segments)")
    n_neg: int = Field(0, description="Negative subjects (or segments)")
    aggregation: AggregationMode = Field(AggregationMode.SUBJECT_MEAN, description="Level AUROC was computed at")
    config_hash: Optional[str] = Field(None, description="Hash of the experiment config")


SeedOutcome = Tuple[float, int, int]


def multi_seed_report(
    run_fn: Callable[[int], SeedOutcome],
    seeds: Sequence[int],
    aggregation: AggregationMode = AggregationMode.SUBJECT_MEAN,
    config_hash: Optional[str] = None,
) -> EvalReport:
    """Run once per seed and collect AUROCs.

    run_fn returns (auroc, n_pos, n_neg). A raising run is recorded as failed.
    """
    if not seeds:
        raise EvaluationError("At least one seed is required")

    values: List[Optional[float]] = []
    failed: List[int] = []
    n_pos = n_neg = 0
    for seed in seeds:
        try:
            value, n_pos, n_neg = run_fn(seed)
        except Exception as e:
            logger.error("Seed run failed", seed=seed, error=str(e), error_type=type(e).__name__)
            values.append(None)
            failed.append(seed)
            continue
        logger.info("Seed run finished", seed=seed, auroc=value)
        values.append(float(value))

    succeeded = [v for v in values if v is not None]
    mean = sum(succeeded) / len(succeeded) if succeeded else None
    return EvalReport(
        seeds=list(seeds),
        per_seed_auroc=values,
        mean_auroc=mean,
        n_successful=len(succeeded),
        failed_seeds=failed,
        n_pos=n_pos,
        n_neg=n_neg,
        aggregation=aggregation,
        config_hash=config_hash,
    )
