"""Adam, SGD and the sharpness-aware (SAM) two-step wrapper.

Optimizers work on dictionaries of numpy arrays and update them in place, so
passing the `.data` arrays of model tensors updates the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from coughkit.exceptions import InvalidParameterError, NonFiniteError, ShapeMismatchError

ArrayDict = Dict[str, np.ndarray]
LossAndGrad = Callable[[], Tuple[float, ArrayDict]]
InnerStep = Callable[[ArrayDict], None]


@dataclass
class AdamState:
    """First/second moment estimates per parameter and the step counter."""

    m: ArrayDict = field(default_factory=dict)
    v: ArrayDict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ArrayDict) -> AdamState:
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def _check_aligned(params: ArrayDict, grads: ArrayDict) -> None:
    for name, p in params.items():
        if name not in grads:
            raise ShapeMismatchError(f"No gradient for parameter {name}", p.shape)
        if grads[name].shape != p.shape:
            raise ShapeMismatchError(f"Gradient shape differs for {name}", p.shape, grads[name].shape)


def adam_step(params: ArrayDict, grads: ArrayDict, state: AdamState, lr: float) -> ArrayDict:
    """One bias-corrected Adam update."""
    _check_aligned(params, grads)
    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params


def sgd_step(params: ArrayDict, grads: ArrayDict, lr: float) -> ArrayDict:
    """Plain gradient descent."""
    _check_aligned(params, grads)
    for name, p in params.items():
        p -= lr * grads[name]
    return params


class Adam:
    """Adam bound to a parameter dictionary."""

    def __init__(self, params: ArrayDict, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.lr = lr
        self.state = AdamState.zeros_like(params)
        self.state.beta1, self.state.beta2, self.state.eps = beta1, beta2, eps

    def step(self, grads: ArrayDict) -> None:
        adam_step(self.params, grads, self.state, self.lr)


def global_norm(grads: ArrayDict) -> float:
    """L2 norm over every entry of every array."""
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def sam_step(params: ArrayDict, loss_and_grad: LossAndGrad, rho: float, inner_step: InnerStep) -> float:
    """Sharpness-aware step.

    Moves to params + rho * g / ||g||, recomputes the gradient there, restores
    the original params and applies inner_step with the perturbed gradient.
    With a zero gradient the perturbation is skipped.

    Returns:
        The loss at the original params

    Raises:
        NonFiniteError: If a loss evaluation is not finite
    """
    if rho <= 0:
        raise InvalidParameterError("rho must be > 0", rho=rho)
    loss, grads = loss_and_grad()
    if not np.isfinite(loss):
        raise NonFiniteError("SAM loss is not finite", loss=loss)

    norm = global_norm(grads)
    if norm == 0.0:
        inner_step(grads)
        return loss

    saved = {name: p.copy() for name, p in params.items()}
    for name, p in params.items():
        p += rho * grads[name] / norm

    try:
        perturbed_loss, perturbed_grads = loss_and_grad()
        if not np.isfinite(perturbed_loss):
            raise NonFiniteError("SAM loss at the perturbed point is not finite", loss=perturbed_loss)
    finally:
        for name, p in params.items():
            p[...] = saved[name]
    inner_step(perturbed_grads)
    return loss
