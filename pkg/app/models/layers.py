# app/models/layers.py

import logging
import math
from typing import Iterator, Mapping, Optional

import numpy as np

from app.core.errors import ConfigurationError, DimensionError, SchemaError
from app.engine.functional import MASKED_LOGIT, dropout, embedding, gelu, layer_norm, softmax
from app.engine.tensor import Tensor

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A trainable leaf owned by a Module."""

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container of Parameters and sub-Modules.

    Parameter names are dot-separated attribute paths (`decoder.layers.0.ff.hidden.weight`),
    discovered from instance attributes in definition order. Attributes starting
    with an underscore are private state and are never walked.
    """
    training: bool = False

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        params: dict[str, Parameter] = {}
        for key, value in self._children():
            if isinstance(value, Parameter):
                params[prefix + key] = value
            else:
                params.update(value.named_parameters(f"{prefix}{key}."))
        return params

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_dropout_rng(self, rng: Optional[np.random.Generator]) -> None:
        for module in self.modules():
            if isinstance(module, Dropout):
                module._rng = rng

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters().items()}

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Copy values into the existing parameters; names and shapes must match exactly."""
        params = self.named_parameters()
        missing = sorted(set(params) - set(arrays))
        unexpected = sorted(set(arrays) - set(params))
        if missing or unexpected:
            raise SchemaError(f"parameter names differ (missing {missing[:5]}, unexpected {unexpected[:5]})",
                              location="parameters")
        for name, param in params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != param.shape:
                raise SchemaError(f"shape {value.shape} does not match model shape {param.shape}",
                                  location=f"parameters.{name}")
            param.data[...] = value


class Linear(Module):
    """y = x·W + b with W stored as (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter(uniform_init(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"linear expects width {self.d_in}, got input of shape {x.shape}")
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Embedding(Module):
    def __init__(self, count: int, width: int, rng: np.random.Generator):
        self.table = Parameter(uniform_init(rng, (count, width), width))

    def forward(self, ids: np.ndarray) -> Tensor:
        return embedding(self.table, ids)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float):
        if eps <= 0:
            raise ConfigurationError(f"layer-norm eps must be positive, got {eps}", field="model.ln_eps")
        self.eps = eps
        self.gamma = Parameter(np.ones(width))
        self.beta = Parameter(np.zeros(width))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, rate: float):
        self.rate = rate
        self._rng: Optional[np.random.Generator] = None

    def forward(self, x: Tensor) -> Tensor:
        if not self.training:
            return x
        return dropout(x, self.rate, self._rng)


class FeedForward(Module):
    def __init__(self, width: int, hidden: int, rng: np.random.Generator):
        self.hidden = Linear(width, hidden, rng)
        self.out = Linear(hidden, width, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.out(gelu(self.hidden(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, N, W) -> (B, heads, N, W / heads)."""
    batch, rows, width = x.shape
    return x.reshape(batch, rows, heads, width // heads).permute(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    """(B, heads, N, w) -> (B, N, heads·w)."""
    batch, heads, rows, width = x.shape
    return x.permute(0, 2, 1, 3).reshape(batch, rows, heads * width)


def attention_probs(queries: Tensor, keys: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
    """softmax(Q·Kᵀ / √d_k) over keys; `key_mask` is (B, Nk) with True for real keys."""
    scores = (queries @ keys.transpose()) * (1.0 / math.sqrt(queries.shape[-1]))
    if key_mask is not None:
        hidden = ~np.asarray(key_mask, dtype=bool)
        scores = scores.masked_fill(hidden[:, None, None, :], MASKED_LOGIT)
    return softmax(scores, axis=-1)


class MultiHeadAttention(Module):
    """Standard concatenate-and-project attention used inside encoder and decoder blocks."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, field: str = "model.heads"):
        if width % heads:
            raise ConfigurationError(f"{heads} heads do not divide width {width}", field=field)
        self.heads = heads
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.out = Linear(width, width, rng)

    def forward(self, x: Tensor, memory: Tensor, key_mask: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
        q = split_heads(self.query(x), self.heads)
        k = split_heads(self.key(memory), self.heads)
        v = split_heads(self.value(memory), self.heads)
        probs = attention_probs(q, k, key_mask)
        return self.out(merge_heads(probs @ v)), probs


class EncoderBlock(Module):
    """Post-norm transformer encoder layer: x = LN(x + Attn(x)); x = LN(x + FF(x))."""

    def __init__(self, width: int, heads: int, ff_dim: int, eps: float, rng: np.random.Generator,
                 dropout_rate: float = 0.0, field: str = "model.heads"):
        self.attention = MultiHeadAttention(width, heads, rng, field=field)
        self.attention_norm = LayerNorm(width, eps)
        self.ff = FeedForward(width, ff_dim, rng)
        self.ff_norm = LayerNorm(width, eps)
        self.drop = Dropout(dropout_rate)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        attended, _ = self.attention(x, x, mask)
        x = self.attention_norm(x + self.drop(attended))
        return self.ff_norm(x + self.drop(self.ff(x)))
