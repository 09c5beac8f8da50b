"""Self-supervised pretraining, supervised fine-tuning and evaluation."""

from coughkit.training.evaluation import (
    EvalReport,
    ScoredSample,
    SubjectScore,
    aggregate_by_subject,
    auroc,
    evaluate_samples,
    multi_seed_report,
)
from coughkit.training.finetune import (
    EpochMetrics,
    Finetuner,
    FinetuneResult,
    class_weight,
    class_weight_from_counts,
    finetune,
    init_finetune_from_pretrain,
    predict_scores,
    weighted_cross_entropy,
)
from coughkit.training.ssl import Pretrainer, SslDecoder, ema_update, sample_mask, ssl_losses

__all__ = [
    "EpochMetrics",
    "EvalReport",
    "Finetuner",
    "FinetuneResult",
    "Pretrainer",
    "ScoredSample",
    "SslDecoder",
    "SubjectScore",
    "aggregate_by_subject",
    "auroc",
    "class_weight",
    "class_weight_from_counts",
    "ema_update",
    "evaluate_samples",
    "finetune",
    "init_finetune_from_pretrain",
    "multi_seed_report",
    "predict_scores",
    "sample_mask",
    "ssl_losses",
    "weighted_cross_entropy",
]
