"""Supervised fine-tuning with class-weighted cross-entropy, Adam and optional SAM."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from coughkit.audio.augment import mixup_batch
from coughkit.config.augment_models import AugmentConfig
from coughkit.config.base_models import AggregationMode, InitSource, OptimizerKind
from coughkit.config.training_models import TrainConfig
from coughkit.core.features import Example, Featurizer
from coughkit.core.manifest import DatasetManifest, Split
from coughkit.core.rng import RngStreams
from coughkit.exceptions import EvaluationError, InvalidParameterError, TrainingError
from coughkit.nn.autodiff import Tensor, log_softmax, no_grad, softmax
from coughkit.nn.checkpoint import Checkpoint, model_checkpoint, model_from_checkpoint, save_checkpoint
from coughkit.nn.optim import Adam, LossAndGrad, sam_step
from coughkit.nn.vit import VitModel, patchify
from coughkit.training.evaluation import ScoredSample, evaluate_samples

logger = structlog.get_logger(__name__)

N_CLASSES = 2


def class_weight_from_counts(n_neg: int, n_pos: int) -> float:
    """#negative / #positive.

    Raises:
        TrainingError: If either class is absent
    """
    if n_neg <= 0 or n_pos <= 0:
        raise TrainingError("Both classes must be present to weight the loss", n_neg=n_neg, n_pos=n_pos)
    return n_neg / n_pos


def class_weight(manifest: DatasetManifest, split: Split = Split.TRAIN) -> float:
    n_neg, n_pos = manifest.counts(split)
    return class_weight_from_counts(n_neg, n_pos)


def one_hot(labels: Sequence[int]) -> np.ndarray:
    targets = np.zeros((len(labels), N_CLASSES))
    targets[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return targets


def weighted_cross_entropy(logits: Tensor, targets: np.ndarray, pos_weight: float) -> Tensor:
    """Batch mean of -sum(y * log softmax(z)), each sample scaled by pos_weight * y_pos + y_neg.

    The weight is linear in the soft label so mixed targets interpolate their weights.

    Raises:
        InvalidParameterError: If a target row is not a probability vector
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2 or targets.shape != logits.shape or targets.shape[1] != N_CLASSES:
        raise InvalidParameterError(
            "Targets must be (batch, 2) and match the logits",
            targets=targets.shape,
            logits=logits.shape,
        )
    if np.any(targets < 0) or not np.allclose(targets.sum(axis=1), 1.0, atol=1e-6):
        raise InvalidParameterError("Target rows must be non-negative and sum to 1")
    if pos_weight <= 0:
        raise InvalidParameterError("pos_weight must be > 0", pos_weight=pos_weight)

    per_sample = -(log_softmax(logits, axis=1) * Tensor(targets)).sum(axis=1)
    weights = pos_weight * targets[:, 1] + targets[:, 0]
    return (per_sample * Tensor(weights)).mean()


def predict_scores(model: VitModel, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Positive-class probability for (N, C, H, W) inputs."""
    p = model.cfg.patch_size
    scores: List[np.ndarray] = []
    with no_grad():
        for start in range(0, inputs.shape[0], batch_size):
            trace = model.forward(patchify(inputs[start : start + batch_size], p))
            scores.append(softmax(trace.logits, axis=1).data[:, 1])
    if not scores:
        return np.zeros(0)
    return np.clip(np.concatenate(scores).astype(np.float64), 0.0, 1.0)


def score_examples(
    model: VitModel,
    featurizer: Featurizer,
    examples: Sequence[Example],
    aggregation: AggregationMode,
) -> Tuple[float, int, int]:
    """(AUROC, n_pos, n_neg) of a model on labeled examples."""
    scores = predict_scores(model, featurizer.batch_inputs(examples))
    samples = [
        ScoredSample(subject_id=ex.subject_id, segment_score=float(s), label=ex.label)
        for ex, s in zip(examples, scores)
    ]
    return evaluate_samples(samples, aggregation)


def init_finetune_from_pretrain(
    checkpoint: Checkpoint,
    source: InitSource,
    n_classes: int,
    rng: np.random.Generator,
) -> VitModel:
    """Fine-tuning model from a pretraining (or plain model) checkpoint with a fresh head."""
    kind = checkpoint.config.get("kind")
    if kind == "ssl":
        model = model_from_checkpoint(checkpoint, source.value)
        logger.info("Initialized from pretraining checkpoint", network=source.value)
        return model.replace_head(n_classes, rng)
    if kind == "model":
        model = model_from_checkpoint(checkpoint)
        return model if model.cfg.n_classes == n_classes else model.replace_head(n_classes, rng)
    raise TrainingError("Unrecognized checkpoint kind", kind=kind)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    eval_auroc: Optional[float]
    lr: float
    seconds: float

    def as_row(self) -> List[str]:
        auroc = "" if self.eval_auroc is None else repr(self.eval_auroc)
        return [str(self.epoch), repr(self.train_loss), auroc, repr(self.lr), f"{self.seconds:.3f}"]


@dataclass
class FinetuneResult:
    """Best model (by evaluation AUROC, else the last epoch) and the per-epoch log."""

    model: VitModel
    metrics: List[EpochMetrics] = field(default_factory=list)
    pos_weight: float = 1.0
    best_epoch: int = 0
    best_auroc: Optional[float] = None


class Finetuner:
    """Epoch loop over shuffled mini-batches.

    Every random draw comes from a named stream keyed on (epoch, batch, item) so
    runs with the same seed repeat exactly.
    """

    def __init__(
        self,
        model: VitModel,
        featurizer: Featurizer,
        cfg: TrainConfig,
        augment: AugmentConfig,
        streams: RngStreams,
        aggregation: AggregationMode = AggregationMode.SUBJECT_MEAN,
    ) -> None:
        if model.cfg.n_classes != N_CLASSES:
            raise TrainingError("Model head must have two outputs", n_classes=model.cfg.n_classes)
        self.model = model
        self.featurizer = featurizer
        self.cfg = cfg
        self.augment = augment
        self.streams = streams
        self.aggregation = aggregation
        self.params: Dict[str, np.ndarray] = model.state_dict()
        self.optimizer = Adam(self.params, lr=cfg.learning_rate)
        self.logger = logger.bind(stage="finetune", optimizer=cfg.optimizer.value)

    def _resolve_pos_weight(self, train: Sequence[Example]) -> float:
        if self.cfg.pos_weight == "auto":
            n_pos = sum(ex.label for ex in train)
            return class_weight_from_counts(len(train) - n_pos, n_pos)
        return float(self.cfg.pos_weight)

    def _loss_and_grad(self, patches: np.ndarray, targets: np.ndarray, pos_weight: float) -> LossAndGrad:
        def evaluate() -> Tuple[float, Dict[str, np.ndarray]]:
            self.model.zero_grad()
            loss = weighted_cross_entropy(self.model.forward(patches).logits, targets, pos_weight)
            loss.backward()
            grads = {name: tensor.grad.copy() for name, tensor in self.model.params.items()}
            return loss.item(), grads

        return evaluate

    def _batch(self, train: Sequence[Example], index: np.ndarray, epoch: int, batch: int) -> Tuple[np.ndarray, np.ndarray]:
        chosen = [train[i] for i in index]
        augment = self.augment if self.augment.enabled else None
        inputs = self.featurizer.batch_inputs(
            chosen,
            augment,
            lambda i: self.streams.stream("finetune.augment", epoch, int(index[i])),
        )
        targets = one_hot([ex.label for ex in chosen])
        if augment is not None:
            inputs, targets = mixup_batch(inputs, targets, augment.mixup, self.streams.stream("finetune.mixup", epoch, batch))
        return patchify(inputs, self.model.cfg.patch_size), targets

    def train_epoch(self, train: Sequence[Example], epoch: int, pos_weight: float) -> float:
        order = self.streams.stream("finetune.shuffle", epoch).permutation(len(train))
        losses: List[float] = []
        for batch, start in enumerate(range(0, len(train), self.cfg.batch_size)):
            patches, targets = self._batch(train, order[start : start + self.cfg.batch_size], epoch, batch)
            loss_and_grad = self._loss_and_grad(patches, targets, pos_weight)
            if self.cfg.optimizer == OptimizerKind.ADAM_SAM:
                loss = sam_step(self.params, loss_and_grad, self.cfg.sam_rho, self.optimizer.step)
            else:
                loss, grads = loss_and_grad()
                self.optimizer.step(grads)
            if not np.isfinite(loss):
                raise TrainingError("Training loss is not finite", epoch=epoch, batch=batch)
            losses.append(loss)
        return float(np.mean(losses))

    def evaluate(self, examples: Sequence[Example]) -> Optional[float]:
        if not examples:
            return None
        try:
            value, _, _ = score_examples(self.model, self.featurizer, examples, self.aggregation)
        except EvaluationError as e:
            self.logger.warning("Evaluation AUROC unavailable", reason=str(e))
            return None
        return value

    def fit(
        self,
        train: Sequence[Example],
        eval_examples: Sequence[Example] = (),
        checkpoint_path: Optional[Path] = None,
    ) -> FinetuneResult:
        """Train for cfg.epochs epochs, retaining the best evaluation-AUROC model.

        Raises:
            TrainingError: If the training split is empty or single-class under auto weighting
        """
        if not train:
            raise TrainingError("Training split is empty")
        pos_weight = self._resolve_pos_weight(train)
        self.logger.info("Class weight", pos_weight=pos_weight, n_train=len(train), n_eval=len(eval_examples))

        result = FinetuneResult(model=self.model.copy(), pos_weight=pos_weight)
        for epoch in range(self.cfg.epochs):
            started = time.perf_counter()
            train_loss = self.train_epoch(train, epoch, pos_weight)
            eval_auroc = self.evaluate(eval_examples)
            metrics = EpochMetrics(
                epoch=epoch,
                train_loss=train_loss,
                eval_auroc=eval_auroc,
                lr=self.cfg.learning_rate,
                seconds=time.perf_counter() - started,
            )
            result.metrics.append(metrics)
            self.logger.info(
                "Epoch finished",
                epoch=epoch,
                train_loss=round(train_loss, 6),
                eval_auroc=eval_auroc,
                seconds=round(metrics.seconds, 3),
            )

            improved = eval_auroc is not None and (result.best_auroc is None or eval_auroc > result.best_auroc)
            if improved or result.best_auroc is None:
                result.model = self.model.copy()
                result.best_epoch = epoch
                result.best_auroc = eval_auroc if improved else result.best_auroc
                if checkpoint_path is not None:
                    save_checkpoint(
                        checkpoint_path,
                        model_checkpoint(result.model, extra={"epoch": epoch, "eval_auroc": eval_auroc}),
                    )
        return result


def finetune(
    model: VitModel,
    featurizer: Featurizer,
    train: Sequence[Example],
    eval_examples: Sequence[Example],
    cfg: TrainConfig,
    augment: AugmentConfig,
    streams: RngStreams,
    aggregation: AggregationMode = AggregationMode.SUBJECT_MEAN,
    checkpoint_path: Optional[Path] = None,
) -> FinetuneResult:
    """Fine-tune `model` on labeled examples; see Finetuner."""
    trainer = Finetuner(model, featurizer, cfg, augment, streams, aggregation)
    return trainer.fit(train, eval_examples, checkpoint_path)
