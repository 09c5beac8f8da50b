"""Dense numpy tensors with reverse-mode differentiation.

Every op records its parents and a closure mapping the output gradient to the
parents' gradients. `Tensor.backward()` walks the graph once in reverse
topological order and accumulates into the `grad` of leaf tensors.

Broadcasting is limited to adding or multiplying a tensor whose shape is a
trailing suffix of the other operand's shape (bias rows, scalars).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from coughkit.exceptions import InvalidParameterError, NonFiniteError, ShapeMismatchError

Operand = Union["Tensor", float, int]
GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class _EngineState(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.checked = False
        self.dtype: Any = np.float32


_state = _EngineState()


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def checked_mode(enabled: bool = True) -> Iterator[None]:
    """Raise NonFiniteError as soon as an op produces NaN or Inf."""
    previous = _state.checked
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = previous


@contextmanager
def float64() -> Iterator[None]:
    """Create tensors in 64-bit precision inside the block."""
    previous = _state.dtype
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = previous


def is_grad_enabled() -> bool:
    return _state.grad_enabled


def default_dtype() -> Any:
    return _state.dtype


class Tensor:
    """N-dimensional array that remembers how it was computed."""

    __slots__ = ("_backward", "_parents", "data", "grad", "name", "requires_grad")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: Tuple[Tensor, ...] = (),
        _backward: Optional[GradFn] = None,
    ) -> None:
        self.data: np.ndarray = np.asarray(data, dtype=_state.dtype)
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if requires_grad and _backward is None else None
        )

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidParameterError("item needs a single-element tensor", shape=self.shape)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad.

        Raises:
            InvalidParameterError: If self is not a scalar or has no graph
        """
        if self.data.size != 1:
            raise InvalidParameterError("backward needs a scalar loss", shape=self.shape)
        if not self.requires_grad:
            raise InvalidParameterError("Loss does not depend on any tensor requiring grad")

        order = _topological_order(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                _check_finite("backward", parent_grad)
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    # Operator sugar

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        return getitem(self, index)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes or None)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Parents before children, each node once."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _check_finite(op: str, values: np.ndarray) -> None:
    if _state.checked and not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{op} produced a non-finite value", op=op, shape=values.shape)


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(op: str, data: np.ndarray, parents: Tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    _check_finite(op, data)
    requires_grad = _state.grad_enabled and any(p.requires_grad for p in parents)
    if not requires_grad:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=grad_fn)


def _check_suffix(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    short, long_ = (b, a) if b.ndim <= a.ndim else (a, b)
    if long_.shape[long_.ndim - short.ndim :] == short.shape:
        return
    raise ShapeMismatchError(f"{op}: incompatible shapes", a.shape, b.shape)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))).reshape(shape)


def add(a: Operand, b: Operand) -> Tensor:
    """Elementwise sum; one operand may be a trailing suffix of the other."""
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("add", a, b)

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), grad_fn)


def sub(a: Operand, b: Operand) -> Tensor:
    """Elementwise difference; one operand may be a trailing suffix of the other."""
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("sub", a, b)

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _result("sub", a.data - b.data, (a, b), grad_fn)


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise product; one operand may be a trailing suffix of the other."""
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("mul", a, b)

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Either b is a 2-D weight applied to the last axis of a, or a and b share
    identical leading batch dimensions.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError("matmul: incompatible shapes", a.shape, b.shape)
    if b.ndim == 2:

        def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            a2 = a.data.reshape(-1, a.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            return g @ b.data.T, a2.T @ g2

    elif a.shape[:-2] == b.shape[:-2]:

        def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    else:
        raise ShapeMismatchError("matmul: batch dimensions differ", a.shape, b.shape)

    return _result("matmul", a.data @ b.data, (a, b), grad_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically shifted softmax."""
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result("softmax", y, (x,), grad_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """log(softmax(x)) without forming the softmax."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _result("log_softmax", y, (x,), grad_fn)


def layer_norm(
    x: Tensor,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
    eps: float = 1e-6,
) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    n = x.shape[-1]
    if gamma is not None and gamma.shape != (n,):
        raise ShapeMismatchError("layer_norm: gamma does not match the last axis", x.shape, gamma.shape)
    if beta is not None and beta.shape != (n,):
        raise ShapeMismatchError("layer_norm: beta does not match the last axis", x.shape, beta.shape)

    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centred * inv_std
    y = x_hat
    if gamma is not None:
        y = y * gamma.data
    if beta is not None:
        y = y + beta.data

    parents = tuple(t for t in (x, gamma, beta) if t is not None)

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        g_hat = g * gamma.data if gamma is not None else g
        gx = inv_std * (
            g_hat - g_hat.mean(axis=-1, keepdims=True) - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        grads: List[Optional[np.ndarray]] = [gx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            grads.append((g * x_hat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return grads

    return _result("layer_norm", y, parents, grad_fn)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + special.erf(x.data / _SQRT_2))

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data**2)
        return (g * (cdf + x.data * pdf),)

    return _result("gelu", x.data * cdf, (x,), grad_fn)


def tensor_sum(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    """Sum over the given axes (all axes by default)."""
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum", np.asarray(y), (x,), grad_fn)


def mean(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over the given axes (all axes by default)."""
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tensor_sum(x, axis, keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Same values, new shape."""
    try:
        y = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeMismatchError("reshape: size mismatch", x.shape, tuple(shape)) from e

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g.reshape(x.shape),)

    return _result("reshape", y, (x,), grad_fn)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes (reverse them by default)."""
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(perm))

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (np.transpose(g, inverse),)

    return _result("transpose", np.transpose(x.data, perm), (x,), grad_fn)


def getitem(x: Tensor, index: Any) -> Tensor:
    """Basic or integer-array indexing."""

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _result("getitem", np.asarray(x.data[index]), (x,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    if not tensors:
        raise InvalidParameterError("concat needs at least one tensor")
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or t.shape[:ax] + t.shape[ax + 1 :] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1 :]:
            raise ShapeMismatchError("concat: shapes differ off the join axis", tensors[0].shape, t.shape)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return np.split(g, bounds, axis=ax)

    return _result("concat", np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), grad_fn)


def repeat(x: Tensor, n: int, axis: int = 0) -> Tensor:
    """Tile a size-1 axis n times."""
    if x.shape[axis] != 1:
        raise ShapeMismatchError("repeat: axis must have size 1", x.shape)
    target = list(x.shape)
    target[axis] = n

    def grad_fn(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g.sum(axis=axis, keepdims=True),)

    return _result("repeat", np.broadcast_to(x.data, target).copy(), (x,), grad_fn)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Per-sample row selection: (B, N, E) with (B, K) indices gives (B, K, E)."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 3 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise ShapeMismatchError("gather_rows: expected (B, N, E) and (B, K)", x.shape, index.shape)
    rows = np.arange(x.shape[0])[:, None]
    return getitem(x, (rows, index))


def finite_diff_grad(f: Callable[[Tensor], Union[Tensor, float]], theta: Tensor, h: float = 1e-5) -> Tensor:
    """Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h for every coordinate.

    theta is perturbed in place and restored, so f may close over it.
    """

    def value() -> float:
        with no_grad():
            out = f(theta)
        return float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)

    grad = np.zeros(theta.shape, dtype=np.float64)
    for i in np.ndindex(*theta.shape):
        original = theta.data[i].copy()
        theta.data[i] = original + h
        plus = value()
        theta.data[i] = original - h
        minus = value()
        theta.data[i] = original
        grad[i] = (plus - minus) / (2.0 * h)
    with float64():
        return Tensor(grad)
