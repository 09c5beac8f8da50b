"""Numpy autodiff engine, vision transformer, optimizers and checkpoints."""

from .autodiff import (
    Tensor,
    checked_mode,
    concat,
    finite_diff_grad,
    float64,
    gather_rows,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    no_grad,
    softmax,
)
from .checkpoint import Checkpoint, load_checkpoint, load_model, save_checkpoint, save_model
from .optim import Adam, AdamState, adam_step, sam_step, sgd_step
from .vit import ForwardTrace, TransformerBlock, VitModel, param_count, patchify, unpatchify

__all__ = [
    "Tensor",
    "checked_mode",
    "concat",
    "finite_diff_grad",
    "float64",
    "gather_rows",
    "gelu",
    "layer_norm",
    "log_softmax",
    "matmul",
    "no_grad",
    "softmax",
    "Checkpoint",
    "load_checkpoint",
    "load_model",
    "save_checkpoint",
    "save_model",
    "Adam",
    "AdamState",
    "adam_step",
    "sam_step",
    "sgd_step",
    "ForwardTrace",
    "TransformerBlock",
    "VitModel",
    "param_count",
    "patchify",
    "unpatchify",
]
