# app/models/cross_modal.py

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.errors import ConfigurationError
from app.engine.functional import masked_mean
from app.engine.tensor import Tensor, concat
from app.models.layers import EncoderBlock, Embedding, Linear, Module, attention_probs, split_heads
from app.schemas.run_config import ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class EncoderOutputs:
    o_text: Tensor          # (B, T, d)
    o_emo: Tensor           # (B, 1, d)
    o_vision: Tensor        # (B, N, d_vision)
    o_context: Tensor       # (B, P² + T, d)
    text_mask: np.ndarray
    region_mask: np.ndarray
    context_mask: np.ndarray

    @property
    def key_mask(self) -> np.ndarray:
        """Row mask of the emotion ∥ text sequence."""
        return np.concatenate([np.ones((self.text_mask.shape[0], 1), dtype=bool), self.text_mask], axis=1)


@dataclass
class PositionTokens:
    l_q: Tensor             # (B, N, d_vision), added to o_vision
    l_k: Tensor             # (B, 1 + T, d), added to o_emo ∥ o_text


@dataclass
class CrossModalOutput:
    alpha: Tensor
    alpha_bar: Optional[Tensor]
    attention: Tensor       # (B, h, query rows, key rows)
    query_mask: np.ndarray
    key_mask: np.ndarray

    def attention_maps(self, index: int = 0) -> list[np.ndarray]:
        """Per-head (query rows, key rows) probabilities of one batch item, padding included."""
        return [head for head in self.attention.data[index]]


class PositionTokenizer(Module):
    """Learned l_q from the command and l_k from the image, each pooled and broadcast."""

    def __init__(self, vocab_size: int, config: ModelConfig, rng: np.random.Generator):
        self.token_embedding = Embedding(vocab_size, config.d_vision, rng)
        self.query_proj = Linear(config.d_vision, config.d_vision, rng)
        self.patch_proj = Linear(config.patch_width, config.d, rng)
        self.key_proj = Linear(config.d, config.d, rng)

    def forward(self, token_ids: np.ndarray, text_mask: np.ndarray, patches: np.ndarray, n_regions: int) -> PositionTokens:
        batch, length = np.asarray(token_ids).shape
        pooled_text = masked_mean(self.token_embedding(token_ids), text_mask)
        l_q = self.query_proj(pooled_text).tanh()
        pooled_patches = self.patch_proj(Tensor(patches)).mean(axis=1, keepdims=True)
        l_k = self.key_proj(pooled_patches).tanh()
        return PositionTokens(l_q=l_q.expand((batch, n_regions, l_q.shape[-1])),
                              l_k=l_k.expand((batch, length + 1, l_k.shape[-1])))


class ContextAligner(Module):
    """Attention pooling of o_context rows onto the key rows.

    One value row per key row, each a convex combination of context rows, so the
    value matrix has as many rows as the keys it pairs with.
    """

    def __init__(self, key_dim: int, d: int, rng: np.random.Generator):
        self.query = Linear(key_dim, d, rng, bias=False)
        self.key = Linear(d, d, rng, bias=False)

    def forward(self, key_in: Tensor, context: Tensor, context_mask: np.ndarray) -> Tensor:
        q = self.query(key_in).reshape(key_in.shape[0], 1, key_in.shape[1], -1)
        k = self.key(context).reshape(context.shape[0], 1, context.shape[1], -1)
        probs = attention_probs(q, k, context_mask)
        return (probs @ context.reshape(context.shape[0], 1, *context.shape[1:])).reshape(
            key_in.shape[0], key_in.shape[1], context.shape[-1])


class CrossModalEncoder(Module):
    """Multi-head cross-modal attention whose heads are summed, plus a linear residual.

    Q = (o_vision + l_q)·W^Q, K = ((o_emo ∥ o_text) + l_k)·W^K, V = aligned(o_context)·W^V_i.
    With `qk_swap` the text side supplies queries and the vision side keys.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        if config.cross_width % config.cross_heads:
            raise ConfigurationError(f"{config.cross_heads} heads do not divide width {config.cross_width}",
                                     field="model.cross_heads")
        self.heads = config.cross_heads
        self.width = config.cross_width
        self.qk_swap = config.qk_swap
        self.use_context = config.use_context
        query_dim, key_dim = (config.d, config.d_vision) if config.qk_swap else (config.d_vision, config.d)
        self.w_q = Linear(query_dim, config.cross_width, rng, bias=False)
        self.w_k = Linear(key_dim, config.cross_width, rng, bias=False)
        self.w_v = Linear(config.d, config.cross_heads * config.cross_width, rng, bias=False)
        self.residual = Linear(query_dim, config.cross_width, rng)
        self.aligner = ContextAligner(key_dim, config.d, rng)

    def attend(self, query_in: Tensor, key_in: Tensor, value_in: Tensor,
               key_mask: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
        """Σ_i softmax(Q_i·K_iᵀ / √d_k)·V_i + Linear(query_in); value_in has one row per key row."""
        batch, keys, _ = value_in.shape
        q = split_heads(self.w_q(query_in), self.heads)
        k = split_heads(self.w_k(key_in), self.heads)
        v = self.w_v(value_in).reshape(batch, keys, self.heads, self.width).permute(0, 2, 1, 3)
        probs = attention_probs(q, k, key_mask)
        alpha = (probs @ v).sum(axis=1) + self.residual(query_in)
        return alpha, probs

    def forward(self, outs: EncoderOutputs, tokens: PositionTokens) -> CrossModalOutput:
        vision_in = outs.o_vision + tokens.l_q
        text_in = concat([outs.o_emo, outs.o_text], axis=1) + tokens.l_k
        if self.qk_swap:
            query_in, key_in = text_in, vision_in
            query_mask, key_mask = outs.key_mask, outs.region_mask
        else:
            query_in, key_in = vision_in, text_in
            query_mask, key_mask = outs.region_mask, outs.key_mask
        if self.use_context:
            context, context_mask = outs.o_context, outs.context_mask
        else:
            context, context_mask = outs.o_text, outs.text_mask
        value_in = self.aligner(key_in, context, context_mask)
        alpha, probs = self.attend(query_in, key_in, value_in, key_mask)
        return CrossModalOutput(alpha=alpha, alpha_bar=None, attention=probs, query_mask=query_mask, key_mask=key_mask)


class FusionEncoder(Module):
    """alpha (width) -> alpha_bar (d) through a projection and one encoder block."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.proj = Linear(config.cross_width, config.d, rng)
        self.block = (EncoderBlock(config.d, config.fusion_heads, config.ff_dim, config.ln_eps, rng,
                                   config.dropout, field="model.fusion_heads")
                      if config.use_fusion else None)

    def forward(self, alpha: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        x = self.proj(alpha)
        return self.block(x, mask) if self.block is not None else x

