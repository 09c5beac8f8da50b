"""Experiment orchestration: one entry point per pipeline command."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field

from coughkit.audio.dsp import write_spectrogram
from coughkit.audio.io import write_wav
from coughkit.audio.segmenter import CoughSegment, segment_clip
from coughkit.audit.logger import RunAuditLogger, RunRecord
from coughkit.config.base_models import OptimizerKind
from coughkit.config.models import ExperimentConfig
from coughkit.config.settings import RuntimeSettings
from coughkit.config.training_models import TrainConfig
from coughkit.core.features import SPECTROGRAM_SUFFIX, Example, Featurizer
from coughkit.core.manifest import DatasetManifest, ManifestRow, Split, parse_manifest, write_manifest
from coughkit.core.rng import RngStreams
from coughkit.exceptions import CoughKitError, EvaluationError, ManifestError, TrainingError
from coughkit.nn.checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint, save_model
from coughkit.nn.vit import VitModel, patchify
from coughkit.training.evaluation import EvalReport, ScoredSample, evaluate_samples, multi_seed_report
from coughkit.training.finetune import (
    N_CLASSES,
    FinetuneResult,
    finetune,
    init_finetune_from_pretrain,
    predict_scores,
    score_examples,
)
from coughkit.training.ssl import Pretrainer
from coughkit.utils.sanitize import safe_file_stem, sanitize_log_input

logger = structlog.get_logger(__name__)

SEGMENT_INDEX_COLUMNS = ("source_id", "onset_frame", "onset_time_s", "segment_path")
METRICS_COLUMNS = ("epoch", "train_loss", "eval_auroc", "lr", "seconds")
PRETRAIN_COLUMNS = ("step", "l_total", "l_global", "l_local", "tau")
PREDICTION_COLUMNS = ("path", "subject_id", "score")


class Command(str, Enum):
    """Pipeline commands."""
    SEGMENT = "segment"
    FEATURIZE = "featurize"
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"
    EVALUATE = "evaluate"
    PREDICT = "predict"
    SAM_ABLATION = "sam-ablation"


class PipelineResult(BaseModel):
    """Outcome of one command."""

    command: Command
    out_dir: Path
    artifacts: List[Path] = Field(default_factory=list)
    summary: Dict[str, Any] = Field(default_factory=dict)
    record: Optional[RunRecord] = None


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _unique_stems(rows: Sequence[ManifestRow]) -> None:
    seen: Dict[str, int] = {}
    for row in rows:
        stem = safe_file_stem(row.path.stem)
        if stem in seen:
            raise ManifestError(
                f"File name {sanitize_log_input(stem)} is used twice; output names would collide (line {row.line_number})",
                line_number=row.line_number,
                value=sanitize_log_input(stem),
                first_line=seen[stem],
            )
        seen[stem] = row.line_number


class PipelineRunner:
    """Runs one command against a manifest, recording every artifact in the run audit."""

    def __init__(
        self,
        config: ExperimentConfig,
        out_dir: Optional[Path] = None,
        settings: Optional[RuntimeSettings] = None,
    ) -> None:
        self.config = config
        self.out_dir = Path(out_dir or config.output_dir)
        self.settings = settings or RuntimeSettings()
        self.featurizer = Featurizer(config.audio, config.dsp, config.model, self.settings)
        self.audit = RunAuditLogger(self.out_dir, enabled=config.logging.audit_enabled)
        self.artifacts: List[Path] = []
        self.logger = logger.bind(out_dir=str(self.out_dir))

    def run(self, command: Command, manifest_path: Path) -> PipelineResult:
        """Execute a command; the run record is written only when it succeeds."""
        command = Command(command)
        self.artifacts = []
        self.audit.start_run(command.value)
        handlers: Dict[Command, Callable[[DatasetManifest], Dict[str, Any]]] = {
            Command.SEGMENT: self.segment,
            Command.FEATURIZE: self.featurize,
            Command.PRETRAIN: self.pretrain,
            Command.FINETUNE: self.finetune,
            Command.EVALUATE: self.evaluate,
            Command.PREDICT: self.predict,
            Command.SAM_ABLATION: self.sam_ablation,
        }
        config_json = self.config.model_dump(mode="json")
        try:
            manifest = parse_manifest(manifest_path)
            self.audit.log_stage("manifest", n_rows=len(manifest), source=sanitize_log_input(str(manifest_path)))
            summary = handlers[command](manifest)
        except CoughKitError as e:
            self.audit.complete_run(
                config_json,
                self.config.config_hash(),
                self.config.seed,
                success=False,
                error_message=str(e),
            )
            raise

        record = self.audit.complete_run(config_json, self.config.config_hash(), self.config.seed)
        self.logger.info("Command finished", command=command.value, n_artifacts=len(self.artifacts))
        return PipelineResult(
            command=command,
            out_dir=self.out_dir,
            artifacts=list(self.artifacts),
            summary=summary,
            record=record,
        )

    def _artifact(self, path: Path, stage: str) -> Path:
        self.audit.record_artifact(path, stage=stage)
        self.artifacts.append(path)
        return path

    # segment

    def segment(self, manifest: DatasetManifest) -> Dict[str, Any]:
        """Cut every clip at its detected onsets into fixed-length WAV segments."""
        _unique_stems(manifest.rows)
        seg_dir = self.out_dir / "segments"
        cfg = self.config.segmenter

        def process(row: ManifestRow) -> Tuple[ManifestRow, List[CoughSegment]]:
            clip = self.featurizer.load_clip(row.path)
            return row, segment_clip(clip, cfg)

        with ThreadPoolExecutor(max_workers=self.settings.max_workers()) as pool:
            results = list(pool.map(process, manifest.rows))

        index_rows: List[List[Any]] = []
        segment_rows: List[ManifestRow] = []
        for row, segments in results:
            if not segments:
                self.logger.warning("No onsets detected", path=sanitize_log_input(str(row.path)))
            for segment in segments:
                path = write_wav(seg_dir / f"{safe_file_stem(row.path.stem)}_onset{segment.onset_frame}.wav", segment.clip)
                self._artifact(path, "segment")
                index_rows.append(
                    [segment.source_id, segment.onset_frame, repr(segment.onset_time_s), path.relative_to(self.out_dir).as_posix()]
                )
                segment_rows.append(
                    ManifestRow(
                        path=path,
                        label=row.label,
                        subject_id=row.subject_id,
                        split=row.split,
                        line_number=len(segment_rows) + 2,
                    )
                )
            self.audit.log_stage("segment", source=sanitize_log_input(str(row.path)), n_segments=len(segments))

        self._artifact(_write_csv(self.out_dir / "segments_index.csv", SEGMENT_INDEX_COLUMNS, index_rows), "segment")
        self._artifact(write_manifest(self.out_dir / "segments_manifest.csv", segment_rows), "segment")
        return {"n_clips": len(manifest), "n_segments": len(segment_rows)}

    # featurize

    def featurize(self, manifest: DatasetManifest) -> Dict[str, Any]:
        """Write one log-mel spectrogram file per row and a manifest pointing at them."""
        _unique_stems(manifest.rows)
        feat_dir = self.out_dir / "features"
        with ThreadPoolExecutor(max_workers=self.settings.max_workers()) as pool:
            spectrograms = list(pool.map(lambda row: self.featurizer.load_spectrogram(row.path), manifest.rows))

        rows: List[ManifestRow] = []
        for row, spec in zip(manifest.rows, spectrograms):
            path = write_spectrogram(feat_dir / f"{safe_file_stem(row.path.stem)}{SPECTROGRAM_SUFFIX}", spec)
            self._artifact(path, "featurize")
            rows.append(
                ManifestRow(path=path, label=row.label, subject_id=row.subject_id, split=row.split, line_number=len(rows) + 2)
            )
        self._artifact(write_manifest(self.out_dir / "features_manifest.csv", rows), "featurize")
        return {"n_features": len(rows)}

    # pretrain

    def pretrain(self, manifest: DatasetManifest) -> Dict[str, Any]:
        """Teacher-student pretraining on the training split; labels are ignored."""
        rows = manifest.split(Split.TRAIN)
        if not rows:
            raise TrainingError("Pretraining needs a non-empty training split")
        examples = self.featurizer.load_examples(rows, keep_waveforms=False)
        patches = patchify(self.featurizer.batch_inputs(examples), self.config.model.patch_size)

        streams = RngStreams(self.config.stage_seed())
        trainer = Pretrainer(self.config.model, self.config.ssl, streams.stream("ssl.init"))
        ckpt_dir = self.out_dir / "checkpoints"
        history = trainer.run(patches, streams.stream, checkpoint_dir=ckpt_dir)
        for path in sorted(ckpt_dir.glob("ssl_step*.ckpt")):
            self._artifact(path, "pretrain")

        self._artifact(save_checkpoint(self.out_dir / "pretrain.ckpt", trainer.checkpoint()), "pretrain")
        self._artifact(
            _write_csv(
                self.out_dir / "pretrain_metrics.csv",
                PRETRAIN_COLUMNS,
                [[r.step, repr(r.l_total), repr(r.l_global), repr(r.l_local), repr(r.tau)] for r in history],
            ),
            "pretrain",
        )
        return {"steps": len(history), "final_loss": history[-1].l_total if history else None}

    # finetune / evaluate

    def _initial_model(self, train_cfg: TrainConfig, streams: RngStreams) -> VitModel:
        if train_cfg.init_checkpoint is not None:
            return init_finetune_from_pretrain(
                load_checkpoint(train_cfg.init_checkpoint),
                train_cfg.init_from,
                N_CLASSES,
                streams.stream("finetune.head"),
            )
        model = VitModel.initialize(self.config.model, streams.stream("model.init"))
        if model.cfg.n_classes != N_CLASSES:
            model = model.replace_head(N_CLASSES, streams.stream("finetune.head"))
        return model

    def _train(
        self,
        seed: int,
        train: Sequence[Example],
        test: Sequence[Example],
        train_cfg: Optional[TrainConfig] = None,
        checkpoint_path: Optional[Path] = None,
    ) -> FinetuneResult:
        train_cfg = train_cfg or self.config.train
        streams = RngStreams(seed)
        return finetune(
            self._initial_model(train_cfg, streams),
            self.featurizer,
            train,
            test,
            train_cfg,
            self.config.augment,
            streams,
            aggregation=self.config.eval.aggregation,
            checkpoint_path=checkpoint_path,
        )

    def _split_examples(self, manifest: DatasetManifest) -> Tuple[List[Example], List[Example]]:
        keep = self.config.augment.enabled
        train = self.featurizer.load_examples(manifest.split(Split.TRAIN), keep_waveforms=keep)
        test = self.featurizer.load_examples(manifest.split(Split.TEST), keep_waveforms=False)
        return train, test

    def finetune(self, manifest: DatasetManifest) -> Dict[str, Any]:
        """Fine-tune on the training split, tracking test-split AUROC per epoch."""
        train, test = self._split_examples(manifest)
        result = self._train(self.config.stage_seed(), train, test)
        model_path = save_model(
            self.out_dir / "model.ckpt",
            result.model,
            extra={"best_epoch": result.best_epoch, "eval_auroc": result.best_auroc, "pos_weight": result.pos_weight},
        )
        self._artifact(model_path, "finetune")
        self._artifact(
            _write_csv(self.out_dir / "metrics.csv", METRICS_COLUMNS, [m.as_row() for m in result.metrics]),
            "finetune",
        )
        return {"best_epoch": result.best_epoch, "best_auroc": result.best_auroc, "pos_weight": result.pos_weight}

    def _seed_runner(
        self,
        train: Sequence[Example],
        test: Sequence[Example],
        train_cfg: TrainConfig,
    ) -> Callable[[int], Tuple[float, int, int]]:
        def run(seed: int) -> Tuple[float, int, int]:
            result = self._train(seed, train, test, train_cfg)
            self.audit.log_stage("seed", seed=seed, best_auroc=result.best_auroc, optimizer=train_cfg.optimizer.value)
            return score_examples(result.model, self.featurizer, test, self.config.eval.aggregation)

        return run

    def evaluate(self, manifest: DatasetManifest) -> Dict[str, Any]:
        """AUROC from precomputed scores, a saved model, or fresh fine-tuning per seed."""
        cfg = self.config.eval
        if manifest.has_scores:
            report = self._evaluate_scores(manifest)
        elif cfg.checkpoint is not None:
            test = self.featurizer.load_examples(manifest.split(Split.TEST), keep_waveforms=False)
            value, n_pos, n_neg = score_examples(self._saved_model(cfg.checkpoint), self.featurizer, test, cfg.aggregation)
            report = EvalReport(
                seeds=[self.config.seed],
                per_seed_auroc=[value],
                mean_auroc=value,
                n_successful=1,
                n_pos=n_pos,
                n_neg=n_neg,
                aggregation=cfg.aggregation,
            )
        else:
            train, test = self._split_examples(manifest)
            report = multi_seed_report(self._seed_runner(train, test, self.config.train), cfg.seeds, cfg.aggregation)

        report.config_hash = self.config.config_hash()
        self._artifact(_write_json(self.out_dir / "evaluation.json", report.model_dump(mode="json")), "evaluate")
        return report.model_dump(mode="json")

    def _evaluate_scores(self, manifest: DatasetManifest) -> EvalReport:
        rows = manifest.split(Split.TEST) or manifest.rows
        scored = [row for row in rows if row.score is not None]
        if not scored:
            raise EvaluationError("The manifest's score column is empty")
        samples = [ScoredSample(subject_id=row.subject_id, segment_score=row.score, label=row.label) for row in scored]
        value, n_pos, n_neg = evaluate_samples(samples, self.config.eval.aggregation)
        return EvalReport(
            seeds=[self.config.seed],
            per_seed_auroc=[value],
            mean_auroc=value,
            n_successful=1,
            n_pos=n_pos,
            n_neg=n_neg,
            aggregation=self.config.eval.aggregation,
        )

    def sam_ablation(self, manifest: DatasetManifest) -> Dict[str, Any]:
        """Same seeds and settings with and without SAM."""
        train, test = self._split_examples(manifest)
        reports: Dict[str, Dict[str, Any]] = {}
        for kind in (OptimizerKind.ADAM, OptimizerKind.ADAM_SAM):
            train_cfg = self.config.train.model_copy(update={"optimizer": kind})
            report = multi_seed_report(
                self._seed_runner(train, test, train_cfg),
                self.config.eval.seeds,
                self.config.eval.aggregation,
                config_hash=self.config.config_hash(),
            )
            reports[kind.value] = report.model_dump(mode="json")
        self._artifact(_write_json(self.out_dir / "sam_ablation.json", reports), "sam-ablation")
        return reports

    def _saved_model(self, path: Path) -> VitModel:
        """Fine-tuned model from a model checkpoint.

        Raises:
            CheckpointError: If the checkpoint holds no classification model
        """
        return model_from_checkpoint(load_checkpoint(path))

    # predict

    def predict(self, manifest: DatasetManifest) -> Dict[str, Any]:
        """Score every manifest row with the model at eval.checkpoint."""
        if self.config.eval.checkpoint is None:
            raise TrainingError("predict needs eval.checkpoint")
        model = self._saved_model(self.config.eval.checkpoint)
        examples = self.featurizer.load_examples(manifest.rows, keep_waveforms=False)
        scores = predict_scores(model, self.featurizer.batch_inputs(examples))
        rows = [[str(row.path), row.subject_id, repr(float(score))] for row, score in zip(manifest.rows, scores)]
        self._artifact(_write_csv(self.out_dir / "predictions.csv", PREDICTION_COLUMNS, rows), "predict")
        return {"n_scored": len(rows), "mean_score": float(np.mean(scores)) if len(scores) else None}


def run_pipeline(
    command: Command | str,
    config: ExperimentConfig,
    manifest_path: Path,
    out_dir: Optional[Path] = None,
    settings: Optional[RuntimeSettings] = None,
) -> PipelineResult:
    """Run one pipeline command; see PipelineRunner."""
    return PipelineRunner(config, out_dir, settings).run(Command(command), Path(manifest_path))
