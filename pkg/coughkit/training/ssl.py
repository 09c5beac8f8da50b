"""Teacher-student self-supervised pretraining on unlabeled spectrogram patches.

The student sees only the visible patches; a decoder predicts, for every
masked patch, the teacher's representation at that position in each of the M
blocks. The teacher sees the full input without gradients and follows the
student by exponential moving average.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from coughkit.config.base_models import MaskStrategy
from coughkit.config.network_models import VitConfig
from coughkit.config.training_models import SslConfig
from coughkit.exceptions import InvalidParameterError, ShapeMismatchError, TrainingError
from coughkit.nn.autodiff import (
    Tensor,
    concat,
    gather_rows,
    layer_norm,
    mean,
    no_grad,
    repeat,
)
from coughkit.nn.checkpoint import Checkpoint, save_checkpoint
from coughkit.nn.optim import Adam, AdamState
from coughkit.nn.vit import Params, TransformerBlock, VitModel, init_linear, init_norm, trunc_normal

logger = structlog.get_logger(__name__)


def masked_count(n_patches: int, mask_ratio: float) -> int:
    """P' = round(mask_ratio * P)."""
    return int(round(mask_ratio * n_patches))


def sample_mask(
    n_patches: int,
    mask_ratio: float,
    rng: np.random.Generator,
    strategy: MaskStrategy = MaskStrategy.RANDOM,
    grid: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """Boolean mask of length P with exactly P' True (masked) entries.

    Random masking picks P' positions uniformly without replacement. Block
    masking covers random rectangles of the (rows, cols) patch grid until P'
    patches are masked.

    Raises:
        InvalidParameterError: If P' would be 0 or P
    """
    if n_patches < 2:
        raise InvalidParameterError("Masking needs at least two patches", n_patches=n_patches)
    if not 0 < mask_ratio < 1:
        raise InvalidParameterError("mask_ratio must lie in (0, 1)", mask_ratio=mask_ratio)
    n_masked = masked_count(n_patches, mask_ratio)
    if n_masked == 0 or n_masked == n_patches:
        raise InvalidParameterError(
            "mask_ratio leaves no masked or no visible patch",
            n_patches=n_patches,
            mask_ratio=mask_ratio,
        )

    mask = np.zeros(n_patches, dtype=bool)
    if strategy == MaskStrategy.RANDOM:
        mask[rng.choice(n_patches, size=n_masked, replace=False)] = True
        return mask

    rows, cols = grid if grid is not None else (1, n_patches)
    if rows * cols != n_patches:
        raise InvalidParameterError("Patch grid does not match the patch count", grid=(rows, cols), n_patches=n_patches)
    cells = mask.reshape(rows, cols)
    remaining = n_masked
    while remaining > 0:
        h = int(rng.integers(1, max(1, rows // 2) + 1))
        w = int(rng.integers(1, max(1, cols // 2) + 1))
        top = int(rng.integers(0, rows - h + 1))
        left = int(rng.integers(0, cols - w + 1))
        for r in range(top, top + h):
            for c in range(left, left + w):
                if remaining and not cells[r, c]:
                    cells[r, c] = True
                    remaining -= 1
    return mask


def sample_batch_masks(
    batch_size: int,
    cfg: SslConfig,
    model_cfg: VitConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """(B, P) masks, drawn independently per sample."""
    grid = (model_cfg.height // model_cfg.patch_size, model_cfg.width // model_cfg.patch_size)
    return np.stack(
        [sample_mask(model_cfg.n_patches, cfg.mask_ratio, rng, cfg.mask_strategy, grid) for _ in range(batch_size)]
    )


def ema_update(teacher: Dict[str, np.ndarray], student: Dict[str, np.ndarray], tau: float) -> Dict[str, np.ndarray]:
    """teacher <- tau * teacher + (1 - tau) * student, in place.

    Raises:
        ShapeMismatchError: If names or shapes differ
    """
    if set(teacher) != set(student):
        raise ShapeMismatchError(
            "Teacher and student parameters differ",
            (len(teacher),),
            (len(student),),
            missing=sorted(set(teacher) ^ set(student)),
        )
    for name, t in teacher.items():
        s = student[name]
        if t.shape != s.shape:
            raise ShapeMismatchError(f"Parameter {name} differs between teacher and student", t.shape, s.shape)
        t *= tau
        t += (1.0 - tau) * s
    return teacher


@dataclass
class SslBatchOutputs:
    """Tensors entering the pretraining objective.

    x_s: (B, P', M, E) decoder predictions at masked positions
    f_t_local: (B, P', M, E) teacher block outputs at the same positions
    c_s: (B, E) student class-token output
    f_t_global: (B, E) average-pooled teacher patch outputs
    """

    x_s: Tensor
    f_t_local: Tensor
    c_s: Tensor
    f_t_global: Tensor


def ssl_losses(out: SslBatchOutputs, w_global: float = 1.0, w_local: float = 1.0) -> Tuple[Tensor, Tensor, Tensor]:
    """(L_global, L_local, L_total), each a mean squared error."""
    if out.x_s.shape != out.f_t_local.shape:
        raise ShapeMismatchError("Local predictions and targets differ", out.x_s.shape, out.f_t_local.shape)
    if out.c_s.shape != out.f_t_global.shape:
        raise ShapeMismatchError("Global prediction and target differ", out.c_s.shape, out.f_t_global.shape)
    d_local = out.x_s - out.f_t_local
    d_global = out.c_s - out.f_t_global
    l_local = mean(d_local * d_local)
    l_global = mean(d_global * d_global)
    return l_global, l_local, l_global * w_global + l_local * w_local


class SslDecoder:
    """Predicts per-block teacher representations at masked positions.

    Visible student outputs are embedded, mask tokens fill the masked positions,
    positional embeddings are added over the full grid, and the transformer
    blocks run before a linear map to M * E values per masked patch.
    """

    def __init__(self, model_cfg: VitConfig, depth: int, params: Params) -> None:
        self.model_cfg = model_cfg
        self.depth = depth
        self.params = params
        self.blocks = [
            TransformerBlock(params, f"blocks.{i}", model_cfg.n_heads, model_cfg.layer_norm_eps) for i in range(depth)
        ]

    @classmethod
    def initialize(cls, model_cfg: VitConfig, depth: int, rng: np.random.Generator) -> SslDecoder:
        e, std = model_cfg.embed_dim, model_cfg.init_std
        params: Params = {}
        init_linear(params, "embed", e, e, rng, std)
        params["mask_token"] = Tensor(trunc_normal(rng, (1, 1, e), std), requires_grad=True, name="mask_token")
        params["pos_embed"] = Tensor(trunc_normal(rng, (model_cfg.n_patches, e), std), requires_grad=True, name="pos_embed")
        for i in range(depth):
            TransformerBlock.init_params(params, f"blocks.{i}", e, model_cfg.mlp_hidden, rng, std)
        init_norm(params, "norm", e)
        init_linear(params, "head", e, model_cfg.depth * e, rng, std)
        return cls(model_cfg, depth, params)

    @classmethod
    def from_state_dict(cls, model_cfg: VitConfig, depth: int, state: Dict[str, np.ndarray]) -> SslDecoder:
        params = {name: Tensor(np.array(v), requires_grad=True, name=name) for name, v in state.items()}
        return cls(model_cfg, depth, params)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def __call__(self, visible_reps: Tensor, visible_index: np.ndarray, masked_index: np.ndarray) -> Tensor:
        p = self.params
        b, n_masked = masked_index.shape
        e, m = self.model_cfg.embed_dim, self.model_cfg.depth

        z = visible_reps @ p["embed.weight"] + p["embed.bias"]
        fill = repeat(repeat(p["mask_token"], b, axis=0), n_masked, axis=1)
        full = concat([z, fill], axis=1)
        restore = np.argsort(np.concatenate([visible_index, masked_index], axis=1), axis=1, kind="stable")
        h = gather_rows(full, restore) + p["pos_embed"]
        for block in self.blocks:
            h, _ = block(h)
        h = layer_norm(h, p["norm.weight"], p["norm.bias"], self.model_cfg.layer_norm_eps)
        out = gather_rows(h, masked_index) @ p["head.weight"] + p["head.bias"]
        return out.reshape(b, n_masked, m, e)


def freeze(model: VitModel) -> VitModel:
    """Stop a model's parameters from receiving gradients."""
    for t in model.params.values():
        t.requires_grad = False
        t.grad = None
    return model


def teacher_targets(
    teacher: VitModel,
    patches: np.ndarray,
    masked_index: np.ndarray,
    layer_norm_targets: bool,
) -> Tuple[Tensor, Tensor]:
    """(F_t, f_t): per-block teacher outputs at masked positions and pooled final outputs."""
    with no_grad():
        trace = teacher.forward(patches)
        rows = np.arange(masked_index.shape[0])[:, None]
        per_block = []
        for reps in trace.patch_reps_per_block:
            selected = Tensor(reps.data[rows, masked_index])
            if layer_norm_targets:
                selected = layer_norm(selected, eps=teacher.cfg.layer_norm_eps)
            per_block.append(selected.data)
        local = Tensor(np.stack(per_block, axis=2))
        pooled = Tensor(trace.final_patch_reps.data.mean(axis=1))
    return local, pooled


@dataclass
class SslStepResult:
    """Losses of one pretraining step."""

    step: int
    l_total: float
    l_global: float
    l_local: float
    tau: float


def pretrain_step(
    student: VitModel,
    teacher: VitModel,
    decoder: SslDecoder,
    patches: np.ndarray,
    cfg: SslConfig,
    rng: np.random.Generator,
    optimizer: Adam,
    step: int = 0,
) -> SslStepResult:
    """Teacher forward, masked student forward, decoder, gradient step, then EMA.

    The optimizer must be bound to the student and decoder arrays as returned by
    `trainable_arrays`.

    Raises:
        TrainingError: If student and teacher configs differ
    """
    if student.cfg != teacher.cfg:
        raise TrainingError("Student and teacher must share one architecture")
    masks = sample_batch_masks(patches.shape[0], cfg, student.cfg, rng)
    masked_index = np.stack([np.flatnonzero(row) for row in masks])

    f_t_local, f_t_global = teacher_targets(teacher, patches, masked_index, cfg.layer_norm_targets)

    student.zero_grad()
    decoder.zero_grad()
    trace = student.forward(patches, visible_mask=~masks)
    x_s = decoder(trace.final_patch_reps, trace.visible_index, masked_index)
    l_global, l_local, l_total = ssl_losses(
        SslBatchOutputs(x_s=x_s, f_t_local=f_t_local, c_s=trace.cls_out, f_t_global=f_t_global),
        cfg.w_global,
        cfg.w_local,
    )
    l_total.backward()

    grads = {f"student.{k}": t.grad for k, t in student.params.items()}
    grads.update({f"decoder.{k}": t.grad for k, t in decoder.params.items()})
    optimizer.step(grads)

    tau = cfg.tau_at(step)
    ema_update(teacher.state_dict(), student.state_dict(), tau)
    return SslStepResult(
        step=step,
        l_total=l_total.item(),
        l_global=l_global.item(),
        l_local=l_local.item(),
        tau=tau,
    )


def trainable_arrays(student: VitModel, decoder: SslDecoder) -> Dict[str, np.ndarray]:
    """The arrays the pretraining optimizer updates, keyed as in checkpoints."""
    arrays = {f"student.{k}": v for k, v in student.state_dict().items()}
    arrays.update({f"decoder.{k}": v for k, v in decoder.state_dict().items()})
    return arrays


class Pretrainer:
    """Owns student, teacher, decoder and optimizer for one pretraining run."""

    def __init__(self, model_cfg: VitConfig, cfg: SslConfig, rng: np.random.Generator) -> None:
        self.model_cfg = model_cfg
        self.cfg = cfg
        self.student = VitModel.initialize(model_cfg, rng)
        self.teacher = freeze(self.student.copy())
        self.decoder = SslDecoder.initialize(model_cfg, cfg.decoder_depth, rng)
        self.optimizer = Adam(trainable_arrays(self.student, self.decoder), lr=cfg.learning_rate)
        self.step_count = 0
        self.history: List[SslStepResult] = []
        self.logger = logger.bind(stage="pretrain")

    def step(self, patches: np.ndarray, rng: np.random.Generator) -> SslStepResult:
        result = pretrain_step(
            self.student,
            self.teacher,
            self.decoder,
            patches,
            self.cfg,
            rng,
            self.optimizer,
            step=self.step_count,
        )
        self.step_count += 1
        self.history.append(result)
        return result

    def run(
        self,
        patches: np.ndarray,
        rng_for_step: Callable[[str, int], np.random.Generator],
        checkpoint_dir: Optional[Path] = None,
    ) -> List[SslStepResult]:
        """Run cfg.steps steps on mini-batches drawn from (N, P, D) patches.

        Args:
            patches: Patchified model inputs of the whole unlabeled set
            rng_for_step: Maps (stream name, step) to a generator
            checkpoint_dir: Where periodic and final checkpoints go, if anywhere
        """
        if patches.shape[0] == 0:
            raise TrainingError("Pretraining set is empty")
        batch = min(self.cfg.batch_size, patches.shape[0])
        last_step = self.step_count + self.cfg.steps
        for _ in range(self.cfg.steps):
            step = self.step_count
            chosen = rng_for_step("ssl.batch", step).choice(patches.shape[0], size=batch, replace=False)
            result = self.step(patches[np.sort(chosen)], rng_for_step("ssl.mask", step))
            if step % 10 == 0 or self.step_count == last_step:
                self.logger.info(
                    "Pretraining step",
                    step=step,
                    l_total=round(result.l_total, 6),
                    l_global=round(result.l_global, 6),
                    l_local=round(result.l_local, 6),
                    tau=result.tau,
                )
            if checkpoint_dir is not None and self.cfg.checkpoint_every and (step + 1) % self.cfg.checkpoint_every == 0:
                save_checkpoint(Path(checkpoint_dir) / f"ssl_step{step + 1:06d}.ckpt", self.checkpoint())
        return self.history

    def checkpoint(self) -> Checkpoint:
        """Student, teacher, decoder and Adam moments."""
        tensors = trainable_arrays(self.student, self.decoder)
        tensors.update({f"teacher.{k}": v for k, v in self.teacher.state_dict().items()})
        state = self.optimizer.state
        tensors.update({f"adam.m.{k}": v for k, v in state.m.items()})
        tensors.update({f"adam.v.{k}": v for k, v in state.v.items()})
        model_json = self.model_cfg.model_dump(mode="json")
        return Checkpoint(
            config={
                "kind": "ssl",
                "student": model_json,
                "teacher": model_json,
                "ssl": self.cfg.model_dump(mode="json"),
            },
            tensors=tensors,
            extra={"step": self.step_count, "adam_step": state.step},
        )

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, rng: np.random.Generator) -> Pretrainer:
        """Resume a run from a pretraining checkpoint."""
        if checkpoint.config.get("kind") != "ssl":
            raise TrainingError("Checkpoint is not a pretraining checkpoint", kind=checkpoint.config.get("kind"))
        model_cfg = VitConfig.model_validate(checkpoint.config["student"])
        cfg = SslConfig.model_validate(checkpoint.config["ssl"])
        trainer = cls(model_cfg, cfg, rng)
        trainer.student = VitModel.from_state_dict(model_cfg, checkpoint.subset("student"))
        trainer.teacher = freeze(VitModel.from_state_dict(model_cfg, checkpoint.subset("teacher")))
        trainer.decoder = SslDecoder.from_state_dict(model_cfg, cfg.decoder_depth, checkpoint.subset("decoder"))
        trainer.optimizer = Adam(trainable_arrays(trainer.student, trainer.decoder), lr=cfg.learning_rate)
        trainer.optimizer.state = AdamState(
            m={k: np.array(v) for k, v in checkpoint.subset("adam.m").items()},
            v={k: np.array(v) for k, v in checkpoint.subset("adam.v").items()},
            step=int(checkpoint.extra.get("adam_step", 0)),
        )
        trainer.step_count = int(checkpoint.extra.get("step", 0))
        return trainer
