# app/models/decoder.py

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from app.core.errors import NumericalError
from app.engine.functional import MASKED_LOGIT, additive_scores, gelu, softmax
from app.engine.tensor import Tensor, stack
from app.models.layers import (Dropout, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, Parameter,
                               uniform_init)
from app.schemas.run_config import ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class LayerStack:
    """Per-layer region states; index 0 is the embedding layer, so m layers give m + 1 states."""
    hidden_states: List[Tensor]

    @property
    def depth(self) -> int:
        return len(self.hidden_states)

    def stacked(self) -> Tensor:
        """(B, N, m + 1, d)"""
        return stack(self.hidden_states, axis=2)


class DecoderLayer(Module):
    """Skip input, self-attention over regions, cross-attention to the fused memory, feed-forward."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.self_attention = MultiHeadAttention(config.d, config.decoder_heads, rng, field="model.decoder_heads")
        self.self_norm = LayerNorm(config.d, config.ln_eps)
        self.cross_attention = MultiHeadAttention(config.d, config.decoder_heads, rng, field="model.decoder_heads")
        self.cross_norm = LayerNorm(config.d, config.ln_eps)
        self.ff = FeedForward(config.d, config.ff_dim, rng)
        self.ff_norm = LayerNorm(config.d, config.ln_eps)
        self.drop = Dropout(config.dropout)

    def forward(self, x: Tensor, skip: Tensor, memory: Tensor,
                region_mask: Optional[np.ndarray], memory_mask: Optional[np.ndarray]) -> Tensor:
        x = x + skip
        attended, _ = self.self_attention(x, x, region_mask)
        x = self.self_norm(x + self.drop(attended))
        attended, _ = self.cross_attention(x, memory, memory_mask)
        x = self.cross_norm(x + self.drop(attended))
        return self.ff_norm(x + self.drop(self.ff(x)))


class RSDLayerAttention(Module):
    """Per-region distribution over decoder layers: softmax_l ⟨u, tanh(W·h_l)⟩."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.projection = Parameter(uniform_init(rng, (d, d), d))
        self.query = Parameter(uniform_init(rng, (d,), d))

    def forward(self, layer_stack: LayerStack) -> Tensor:
        """(B, N, m + 1) weights, each region's row a probability vector."""
        return softmax(additive_scores(layer_stack.stacked(), self.projection, self.query), axis=-1)


class MultimodalDecoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.use_rsd = config.use_rsd
        self.skip_proj = Linear(config.d_vision, config.d, rng)
        self.region_proj = Linear(config.d_vision, config.d, rng) if config.qk_swap else None
        self.layers = [DecoderLayer(config, rng) for _ in range(config.decoder_layers)]
        self.rsd = RSDLayerAttention(config.d, rng)
        self.mlp_hidden = Linear(config.d, config.d, rng)
        self.mlp_out = Linear(config.d, 1, rng)

    def decode_stack(self, region_reprs: Tensor, l_q: Tensor, memory: Tensor,
                     region_mask: Optional[np.ndarray] = None, memory_mask: Optional[np.ndarray] = None) -> LayerStack:
        """Run every layer with l_q fed in as a skip input, recording all m + 1 states."""
        skip = self.skip_proj(l_q)
        states = [region_reprs]
        x = region_reprs
        for index, layer in enumerate(self.layers, start=1):
            try:
                x = layer(x, skip, memory, region_mask, memory_mask)
            except NumericalError as e:
                raise NumericalError(f"decoder layer {index}: {e}") from e
            states.append(x)
        return LayerStack(hidden_states=states)

    def rsd_weights(self, layer_stack: LayerStack) -> Tensor:
        return self.rsd(layer_stack)

    def credibility_logits(self, layer_stack: LayerStack, weights: Tensor) -> Tensor:
        """(B, N) logits from the RSD-weighted layer mixture (or the top layer alone)."""
        if self.use_rsd:
            fused = (layer_stack.stacked() * weights.reshape(*weights.shape, 1)).sum(axis=2)
        else:
            fused = layer_stack.hidden_states[-1]
        logits = self.mlp_out(gelu(self.mlp_hidden(fused)))
        return logits.reshape(*logits.shape[:2])


def credibility_scores(logits: Tensor, region_mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over regions; padded regions get zero credibility."""
    if region_mask is not None:
        logits = logits.masked_fill(~np.asarray(region_mask, dtype=bool), MASKED_LOGIT)
    return softmax(logits, axis=-1)
