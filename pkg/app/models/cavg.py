# app/models/cavg.py

import logging
from dataclasses import dataclass

import numpy as np

from app.core.errors import DimensionError
from app.engine.random import Stream, make_rng
from app.engine.tensor import Tensor
from app.models.batch import Batch
from app.models.cross_modal import (CrossModalEncoder, CrossModalOutput, EncoderOutputs, FusionEncoder,
                                    PositionTokenizer, PositionTokens)
from app.models.decoder import LayerStack, MultimodalDecoder, credibility_scores
from app.models.encoders import ContextEncoder, EmotionEmbedding, TextEncoder
from app.models.layers import Module
from app.schemas.run_config import ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class ModelOutput:
    logits: Tensor              # (B, N)
    credibility: Tensor         # (B, N)
    rsd_weights: Tensor         # (B, N, m + 1)
    cross_modal: CrossModalOutput
    layer_stack: LayerStack
    tokens: PositionTokens


class CAVGModel(Module):
    """Encoders -> cross-modal attention -> fusion -> multimodal decoder -> per-region credibility."""

    def __init__(self, config: ModelConfig, vocab_size: int, seed: int = 0):
        rng = make_rng(seed, Stream.INIT)
        self.config = config
        self.text_encoder = TextEncoder(vocab_size, config, rng)
        self.emotion = EmotionEmbedding(config.d, rng)
        self.context_encoder = ContextEncoder(config, rng)
        self.position_tokens = PositionTokenizer(vocab_size, config, rng)
        self.cross_modal = CrossModalEncoder(config, rng)
        self.fusion = FusionEncoder(config, rng)
        self.decoder = MultimodalDecoder(config, rng)
        logger.debug(f"Model built with {sum(p.size for p in self.parameters())} parameters")

    def check_batch(self, batch: Batch) -> None:
        config = self.config
        if batch.region_features.shape[-1] != config.d_vision:
            raise DimensionError(f"region features width {batch.region_features.shape[-1]} "
                                 f"does not match model.d_vision={config.d_vision}")
        expected = (config.grid_size * config.grid_size, config.patch_width)
        if batch.patches.shape[1:] != expected:
            raise DimensionError(f"patch grid {batch.patches.shape[1:]} does not match "
                                 f"model.grid_size={config.grid_size}, model.patch_width={config.patch_width}")

    def encode(self, batch: Batch) -> EncoderOutputs:
        o_text = self.text_encoder(batch.token_ids, batch.text_mask)
        if self.config.use_emotion:
            o_emo = self.emotion(batch.emotion_rows)
        else:
            o_emo = Tensor(np.zeros((len(batch), 1, self.config.d)))
        o_context, context_mask = self.context_encoder(batch.patches, o_text, batch.text_mask)
        return EncoderOutputs(o_text=o_text,
                              o_emo=o_emo,
                              o_vision=Tensor(batch.region_features),
                              o_context=o_context,
                              text_mask=batch.text_mask,
                              region_mask=batch.region_mask,
                              context_mask=context_mask)

    def forward(self, batch: Batch) -> ModelOutput:
        self.check_batch(batch)
        outs = self.encode(batch)
        tokens = self.position_tokens(batch.token_ids, batch.text_mask, batch.patches, batch.region_features.shape[1])
        cross = self.cross_modal(outs, tokens)
        cross.alpha_bar = self.fusion(cross.alpha, cross.query_mask)

        if self.config.qk_swap:
            region_reprs = self.decoder.region_proj(outs.o_vision + tokens.l_q)
        else:
            region_reprs = cross.alpha_bar
        layer_stack = self.decoder.decode_stack(region_reprs, tokens.l_q, cross.alpha_bar,
                                                batch.region_mask, cross.query_mask)
        weights = self.decoder.rsd_weights(layer_stack)
        logits = self.decoder.credibility_logits(layer_stack, weights)
        return ModelOutput(logits=logits,
                           credibility=credibility_scores(logits, batch.region_mask),
                           rsd_weights=weights,
                           cross_modal=cross,
                           layer_stack=layer_stack,
                           tokens=tokens)
