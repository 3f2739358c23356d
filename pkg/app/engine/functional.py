# app/engine/functional.py

from typing import Optional

import numpy as np

from app.core.errors import ConfigurationError, DimensionError, InputValidationError
from app.engine.tensor import Tensor, as_tensor, make_result, mul, tanh, tensor_sum

MASKED_LOGIT = -1e9
BCE_CLAMP = 1e-7
_GELU_C = float(np.sqrt(2.0 / np.pi))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax; every slice along `axis` sums to one."""
    x = as_tensor(x)
    if x.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    try:
        size = x.shape[axis]
    except IndexError as e:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}") from e
    if size == 0:
        raise DimensionError(f"softmax over an empty axis of shape {x.shape}")
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(grad):
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    if eps <= 0:
        raise ConfigurationError(f"layer-norm eps must be positive, got {eps}", field="model.ln_eps")
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match {x.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * rstd

    def backward(grad):
        grad_norm = grad * gamma.data
        grad_x = rstd * (grad_norm
                         - grad_norm.mean(axis=-1, keepdims=True)
                         - normalized * (grad_norm * normalized).mean(axis=-1, keepdims=True))
        grad_gamma = (grad * normalized).reshape(-1, x.shape[-1]).sum(axis=0)
        grad_beta = grad.reshape(-1, x.shape[-1]).sum(axis=0)
        return grad_x, grad_gamma, grad_beta

    return make_result(normalized * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU (smooth everywhere)."""
    inner = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    out = 0.5 * x.data * (1.0 + t)

    def backward(grad):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner),)

    return make_result(out, (x,), backward, "gelu")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup `table[ids]`; gradients scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InputValidationError(f"embedding ids outside [0, {table.shape[0]})")

    def backward(grad):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, grad)
        return (full,)

    return make_result(table.data[ids], (table,), backward, "embedding")


def bce_loss(probabilities: Tensor, targets, mask: Optional[np.ndarray] = None, eps: float = BCE_CLAMP) -> Tensor:
    """Mean binary cross-entropy over unmasked entries, probabilities clamped to [eps, 1-eps]."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != probabilities.shape:
        raise DimensionError(f"bce shape mismatch: {probabilities.shape} vs targets {targets.shape}")
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise InputValidationError("bce targets must be 0 or 1")
    weights = np.ones_like(targets) if mask is None else np.broadcast_to(np.asarray(mask, dtype=np.float64), targets.shape)
    count = weights.sum()
    if count == 0:
        raise InputValidationError("bce over an empty selection")
    p = probabilities.data
    clipped = np.clip(p, eps, 1.0 - eps)
    losses = -(targets * np.log(clipped) + (1.0 - targets) * np.log(1.0 - clipped))
    value = (losses * weights).sum() / count

    def backward(grad):
        inside = (p >= eps) & (p <= 1.0 - eps)
        local = (-targets / clipped + (1.0 - targets) / (1.0 - clipped)) * weights / count
        return (grad * np.where(inside, local, 0.0),)

    return make_result(value, (probabilities,), backward, "bce_loss")


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def masked_mean(x: Tensor, mask: np.ndarray, axis: int = 1) -> Tensor:
    """Mean over `axis` counting only rows where `mask` is True (keeps the axis)."""
    weights = np.asarray(mask, dtype=np.float64)
    counts = np.maximum(weights.sum(axis=axis, keepdims=True), 1.0)
    scaled = mul(x, Tensor((weights / counts)[..., None]))
    return tensor_sum(scaled, axis=axis, keepdims=True)


def additive_scores(hidden: Tensor, projection: Tensor, query: Tensor) -> Tensor:
    """⟨u, tanh(W·h)⟩ over the last axis."""
    return tensor_sum(mul(tanh(hidden @ projection), query), axis=-1)
