"""Tests for class weighting, the weighted loss and the fine-tuning loop."""

import math

import numpy as np
import pytest

from coughkit.config.augment_models import AugmentConfig
from coughkit.config.base_models import AggregationMode, InitSource, OptimizerKind
from coughkit.config.dsp_models import AudioConfig, DspConfig, MelConfig
from coughkit.config.training_models import SslConfig, TrainConfig
from coughkit.core.features import Featurizer
from coughkit.core.rng import RngStreams
from coughkit.exceptions import InvalidParameterError, TrainingError
from coughkit.nn.autodiff import Tensor, float64
from coughkit.nn.checkpoint import Checkpoint, load_model, model_checkpoint
from coughkit.nn.vit import VitModel
from coughkit.training.finetune import (
    EpochMetrics,
    Finetuner,
    class_weight_from_counts,
    finetune,
    init_finetune_from_pretrain,
    one_hot,
    predict_scores,
    score_examples,
    weighted_cross_entropy,
)
from coughkit.training.ssl import Pretrainer


@pytest.fixture
def featurizer(tiny_vit, runtime_settings):
    """Featurizer producing 1x16x16 images from 16-bin log-mel spectrograms."""
    return Featurizer(AudioConfig(), DspConfig(mel=MelConfig(n_mels=16)), tiny_vit, runtime_settings)


@pytest.fixture
def train_cfg():
    """Short, fast fine-tuning schedule."""
    return TrainConfig(learning_rate=1e-2, batch_size=4, epochs=8)


def _model(cfg, seed=0):
    return VitModel.initialize(cfg, np.random.default_rng(seed))


class TestClassWeight:
    """Test the positive-class loss weight."""

    def test_imbalanced(self):
        """Test #negative / #positive on a realistic imbalance."""
        assert class_weight_from_counts(2728, 272) == pytest.approx(10.029, abs=0.01)

    def test_balanced(self):
        """Test that balanced classes give weight one."""
        assert class_weight_from_counts(50, 50) == 1.0

    def test_missing_class(self):
        """Test that a single-class split cannot be weighted."""
        with pytest.raises(TrainingError):
            class_weight_from_counts(10, 0)


class TestWeightedCrossEntropy:
    """Test the class-weighted cross-entropy."""

    def test_uniform_logits(self):
        """Test that zero logits give ln 2 per sample."""
        with float64():
            loss = weighted_cross_entropy(Tensor(np.zeros((4, 2))), one_hot([0, 1, 0, 1]), pos_weight=1.0)

        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_positive_weight(self):
        """Test that all-positive batches are scaled by the weight."""
        with float64():
            loss = weighted_cross_entropy(Tensor(np.zeros((3, 2))), one_hot([1, 1, 1]), pos_weight=10.0)

        assert loss.item() == pytest.approx(10.0 * math.log(2.0), abs=1e-12)

    def test_matches_float64_oracle(self):
        """Test soft labels against a direct numpy computation."""
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(5, 2))
        lam = rng.uniform(size=5)
        targets = np.stack([lam, 1.0 - lam], axis=1)

        with float64():
            loss = weighted_cross_entropy(Tensor(logits), targets, pos_weight=3.0)

        log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        per_sample = -(targets * log_p).sum(axis=1)
        expected = np.mean(per_sample * (3.0 * targets[:, 1] + targets[:, 0]))
        assert loss.item() == pytest.approx(expected, abs=1e-10)

    def test_invalid_targets(self):
        """Test that targets must be probability vectors."""
        with pytest.raises(InvalidParameterError):
            weighted_cross_entropy(Tensor(np.zeros((2, 2))), np.array([[1.0, 1.0], [0.0, 1.0]]), pos_weight=1.0)

    def test_invalid_weight(self):
        """Test that the weight must be positive."""
        with pytest.raises(InvalidParameterError):
            weighted_cross_entropy(Tensor(np.zeros((1, 2))), one_hot([1]), pos_weight=0.0)


class TestPredictScores:
    """Test model scoring."""

    def test_probabilities(self, tiny_vit):
        """Test that scores are positive-class probabilities in [0, 1]."""
        inputs = np.random.default_rng(0).normal(size=(5, 1, 16, 16))

        scores = predict_scores(_model(tiny_vit), inputs, batch_size=2)

        assert scores.shape == (5,)
        assert np.all((scores >= 0.0) & (scores <= 1.0))

    def test_empty(self, tiny_vit):
        """Test that no inputs give no scores."""
        assert predict_scores(_model(tiny_vit), np.zeros((0, 1, 16, 16))).shape == (0,)


class TestFinetuner:
    """Test the fine-tuning loop on separable synthetic spectrograms."""

    @pytest.mark.slow
    def test_learns_separable_task(self, tiny_vit, featurizer, train_cfg, make_spectrogram_examples):
        """Test that held-out AUROC ends high and the loss falls."""
        train = make_spectrogram_examples(12, 12, seed=1, prefix="train")
        test = make_spectrogram_examples(6, 6, seed=2, prefix="test")

        result = finetune(_model(tiny_vit), featurizer, train, test, train_cfg, AugmentConfig.disabled(), RngStreams(0))
        value, n_pos, n_neg = score_examples(result.model, featurizer, test, AggregationMode.SUBJECT_MEAN)

        assert (n_pos, n_neg) == (6, 6)
        assert value >= 0.9
        assert result.best_auroc == pytest.approx(max(m.eval_auroc for m in result.metrics))
        assert result.metrics[-1].train_loss < result.metrics[0].train_loss

    @pytest.mark.slow
    def test_sam_not_worse(self, tiny_vit, featurizer, train_cfg, make_spectrogram_examples):
        """Test that SAM reaches comparable held-out AUROC."""
        train = make_spectrogram_examples(12, 12, seed=1, prefix="train")
        test = make_spectrogram_examples(6, 6, seed=2, prefix="test")
        sam_cfg = train_cfg.model_copy(update={"optimizer": OptimizerKind.ADAM_SAM})

        adam = finetune(_model(tiny_vit), featurizer, train, test, train_cfg, AugmentConfig.disabled(), RngStreams(0))
        sam = finetune(_model(tiny_vit), featurizer, train, test, sam_cfg, AugmentConfig.disabled(), RngStreams(0))

        assert sam.best_auroc >= adam.best_auroc - 0.05

    def test_auto_pos_weight(self, tiny_vit, featurizer, make_spectrogram_examples):
        """Test that the auto weight is #negative / #positive of the training split."""
        train = make_spectrogram_examples(20, 2)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=1)

        result = finetune(_model(tiny_vit), featurizer, train, [], cfg, AugmentConfig.disabled(), RngStreams(0))

        assert result.pos_weight == 10.0
        assert result.best_auroc is None
        assert result.metrics[0].eval_auroc is None

    def test_explicit_pos_weight(self, tiny_vit, featurizer, make_spectrogram_examples):
        """Test that an explicit weight wins over the class ratio."""
        cfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=1, pos_weight=2.5)

        result = finetune(
            _model(tiny_vit), featurizer, make_spectrogram_examples(6, 2), [], cfg, AugmentConfig.disabled(), RngStreams(0)
        )

        assert result.pos_weight == 2.5

    def test_deterministic(self, tiny_vit, featurizer, make_spectrogram_examples):
        """Test that two runs with the same seed agree bitwise."""
        train = make_spectrogram_examples(6, 6)
        cfg = TrainConfig(learning_rate=1e-2, batch_size=4, epochs=2)

        a = finetune(_model(tiny_vit), featurizer, train, [], cfg, AugmentConfig.disabled(), RngStreams(3))
        b = finetune(_model(tiny_vit), featurizer, train, [], cfg, AugmentConfig.disabled(), RngStreams(3))

        assert [m.train_loss for m in a.metrics] == [m.train_loss for m in b.metrics]
        for name, values in a.model.state_dict().items():
            np.testing.assert_array_equal(b.model.params[name].data, values)

    def test_writes_best_checkpoint(self, tiny_vit, featurizer, make_spectrogram_examples, tmp_path):
        """Test that the retained model is saved."""
        cfg = TrainConfig(learning_rate=1e-2, batch_size=4, epochs=2)
        path = tmp_path / "model.ckpt"

        result = finetune(
            _model(tiny_vit),
            featurizer,
            make_spectrogram_examples(4, 4),
            make_spectrogram_examples(2, 2, seed=5, prefix="t"),
            cfg,
            AugmentConfig.disabled(),
            RngStreams(0),
            checkpoint_path=path,
        )

        saved = load_model(path)
        for name, values in result.model.state_dict().items():
            np.testing.assert_array_equal(saved.params[name].data, values)

    def test_empty_train(self, tiny_vit, featurizer, train_cfg):
        """Test that an empty training split is rejected."""
        with pytest.raises(TrainingError):
            finetune(_model(tiny_vit), featurizer, [], [], train_cfg, AugmentConfig.disabled(), RngStreams(0))

    def test_single_class_auto_weight(self, tiny_vit, featurizer, train_cfg, make_spectrogram_examples):
        """Test that auto weighting needs both classes."""
        with pytest.raises(TrainingError):
            finetune(
                _model(tiny_vit), featurizer, make_spectrogram_examples(4, 0), [], train_cfg, AugmentConfig.disabled(), RngStreams(0)
            )

    def test_head_must_be_binary(self, tiny_vit, featurizer, train_cfg):
        """Test that a non-binary head is rejected."""
        model = _model(tiny_vit.model_copy(update={"n_classes": 3}))

        with pytest.raises(TrainingError):
            Finetuner(model, featurizer, train_cfg, AugmentConfig.disabled(), RngStreams(0))

    def test_epoch_row(self):
        """Test the metrics CSV row."""
        row = EpochMetrics(epoch=2, train_loss=0.5, eval_auroc=None, lr=0.01, seconds=1.23456).as_row()

        assert row == ["2", "0.5", "", "0.01", "1.235"]


class TestInitFromPretrain:
    """Test starting fine-tuning from checkpoints."""

    def test_from_pretraining_teacher(self, tiny_vit):
        """Test that the teacher backbone is kept and a new head is attached."""
        trainer = Pretrainer(tiny_vit, SslConfig(mask_ratio=0.5), np.random.default_rng(0))
        checkpoint = trainer.checkpoint()

        model = init_finetune_from_pretrain(checkpoint, InitSource.TEACHER, 2, np.random.default_rng(1))

        for name in model.backbone_names():
            np.testing.assert_array_equal(model.params[name].data, trainer.teacher.params[name].data)

    def test_from_model_checkpoint(self, tiny_vit):
        """Test that a binary model checkpoint is used as is."""
        source = _model(tiny_vit)

        model = init_finetune_from_pretrain(model_checkpoint(source), InitSource.TEACHER, 2, np.random.default_rng(1))

        np.testing.assert_array_equal(model.params["head.weight"].data, source.params["head.weight"].data)

    def test_unknown_kind(self):
        """Test that other checkpoints are rejected."""
        with pytest.raises(TrainingError):
            init_finetune_from_pretrain(Checkpoint(config={"kind": "other"}, tensors={}), InitSource.TEACHER, 2, np.random.default_rng(0))
