# app/engine/tensor.py

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from app.core.errors import DimensionError, NumericalError, UsageError

Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_sequence = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Evaluate without recording operations (per thread)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def check_finite(values: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite values in {where}")


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array with reverse-mode gradient tracking."""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        check_finite(array, name or "tensor construction")
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[Backward] = None
        self._op = "leaf"
        self._seq = next(_sequence)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    # operators
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False): return tensor_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return tensor_mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    def permute(self, *axes): return permute(self, axes)
    def transpose(self): return permute(self, tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2))
    def expand(self, shape): return expand(self, shape)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def tanh(self): return tanh(self)
    def sigmoid(self): return sigmoid(self)
    def masked_fill(self, mask, value: float): return masked_fill(self, mask, value)

    def backward(self) -> None:
        """Populate `.grad` of every leaf reachable from this scalar."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() on a tensor not connected to any trainable leaf")
        ComputationTape.record(self).backward(np.ones_like(self.data))


class ComputationTape:
    """Operations reachable from a root, in execution order.

    Creation order is a topological order: an operation's inputs always exist
    before its output.
    """

    def __init__(self, root: Tensor, nodes: list[Tensor]):
        self.root = root
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "ComputationTape":
        seen = {id(root): root}
        pending = [root]
        while pending:
            node = pending.pop()
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    seen[id(parent)] = parent
                    pending.append(parent)
        return cls(root, sorted(seen.values(), key=lambda t: t._seq))

    def leaves(self) -> list[Tensor]:
        return [node for node in self.nodes if node.is_leaf]

    def backward(self, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): seed}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                check_finite(grad, f"gradient of {node.name or 'leaf'}")
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(data, parents: Sequence[Tensor], backward: Backward, op: str) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    out._seq = next(_sequence)
    tracked = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = tracked
    out._parents = tuple(parents) if tracked else ()
    out._backward = backward if tracked else None
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return (unbroadcast(grad / b.data, a.shape),
                unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

    return make_result(a.data / b.data, (a, b), backward, "div")


def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, (x,), lambda grad: (-grad,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(grad):
        grad_a = grad @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ grad
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda grad: (grad * out,), "exp")


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda grad: (grad / x.data,), "log")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda grad: (grad * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.data)
    positive = x.data >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x.data[positive]))
    shifted = np.exp(x.data[~positive])
    out[~positive] = shifted / (1.0 + shifted)
    return make_result(out, (x,), lambda grad: (grad * out * (1.0 - out),), "sigmoid")


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return make_result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tensor_sum(x, axis, keepdims), 1.0 / count)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda grad: (grad.reshape(x.shape),), "reshape")


def permute(x: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda grad: (np.transpose(grad, inverse),), "permute")


def expand(x: Tensor, shape: tuple) -> Tensor:
    """Broadcast to `shape` (materialized)."""
    try:
        data = np.array(np.broadcast_to(x.data, shape))
    except ValueError as e:
        raise DimensionError(f"cannot expand {x.shape} to {tuple(shape)}") from e
    return make_result(data, (x,), lambda grad: (unbroadcast(grad, x.shape),), "expand")


def getitem(x: Tensor, index) -> Tensor:
    def backward(grad):
        full = np.zeros_like(x.data)
        np.add.at(full, index, grad)
        return (full,)

    return make_result(np.array(x.data[index]), (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat shape mismatch: {[t.shape for t in tensors]} on axis {axis}") from e
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad):
        return tuple(np.split(grad, boundaries, axis=axis))

    return make_result(data, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"stack shape mismatch: {[t.shape for t in tensors]}") from e

    def backward(grad):
        return tuple(np.take(grad, i, axis=axis) for i in range(len(tensors)))

    return make_result(data, tensors, backward, "stack")


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where `mask` is True; masked entries receive no gradient."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    return make_result(np.where(mask, value, x.data), (x,), lambda grad: (np.where(mask, 0.0, grad),), "masked_fill")
