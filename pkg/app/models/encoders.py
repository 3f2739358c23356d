# app/models/encoders.py

import logging
import re
from typing import Iterable, List, Optional, Sequence

import numpy as np

from app.core.errors import ConfigurationError, DimensionError, InputValidationError, SchemaError
from app.engine.tensor import Tensor, concat
from app.models.layers import Embedding, EncoderBlock, LayerNorm, Linear, Module, Parameter, uniform_init
from app.schemas.run_config import ModelConfig
from app.schemas.scene import Command, EmotionCategory, SceneRecord

logger = logging.getLogger(__name__)

PAD = "<pad>"
OOV = "<unk>"
PAD_ID = 0
OOV_ID = 1

_TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")


def split_words(raw_text: str) -> List[str]:
    """Lowercased words with punctuation split off: "Park here." -> ["park", "here", "."]."""
    return _TOKEN_PATTERN.findall(raw_text.lower())


class Vocabulary:
    """Token <-> id table. Ids 0 and 1 are reserved for padding and out-of-vocabulary."""

    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:2]) != [PAD, OOV]:
            raise SchemaError(f"vocabulary must start with '{PAD}' and '{OOV}'", location="vocabulary")
        if len(set(tokens)) != len(tokens):
            raise SchemaError("vocabulary has duplicate tokens", location="vocabulary")
        self.tokens = list(tokens)
        self._ids = {token: i for i, token in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        words = sorted({word for text in texts for word in split_words(text)} - {PAD, OOV})
        return cls([PAD, OOV, *words])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, OOV_ID)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise InputValidationError(f"token id {token_id} outside vocabulary of {len(self.tokens)}")
        return self.tokens[token_id]


def tokenize(raw_text: str, vocabulary: Vocabulary, max_tokens: int) -> Command:
    """Split, map through the vocabulary and truncate to `max_tokens`.

    Padding happens at batch assembly; the returned Command keeps the unpadded ids.
    """
    if not raw_text or not raw_text.strip():
        raise InputValidationError("command text is empty")
    pieces = split_words(raw_text)
    if not pieces:
        raise InputValidationError(f"command text has no tokens: {raw_text!r}")
    truncated = len(pieces) > max_tokens
    if truncated:
        logger.warning(f"Command truncated from {len(pieces)} to {max_tokens} tokens")
        pieces = pieces[:max_tokens]
    return Command(raw_text=raw_text,
                   tokens=[vocabulary.id(piece) for piece in pieces],
                   pieces=pieces,
                   truncated=truncated)


def detokenize(token_ids: Sequence[int], vocabulary: Vocabulary) -> List[str]:
    return [vocabulary.token(int(i)) for i in token_ids if int(i) != PAD_ID]


def load_region_features(scene: SceneRecord, d_vision: Optional[int] = None) -> np.ndarray:
    """Stack region features in region order into (N, d_vision)."""
    if not scene.regions:
        raise SchemaError("scene has no regions", location=f"{scene.id}.regions")
    expected = d_vision if d_vision is not None else len(scene.regions[0].features)
    for i, region in enumerate(scene.regions):
        if len(region.features) != expected:
            raise SchemaError(f"features length {len(region.features)}, expected {expected}",
                              location=f"{scene.id}.regions.{i}.features")
    return np.array([region.features for region in scene.regions], dtype=np.float64)


class TextEncoder(Module):
    """Token + learned position embeddings, then a stack of bidirectional encoder blocks."""

    def __init__(self, vocab_size: int, config: ModelConfig, rng: np.random.Generator):
        self.max_tokens = config.max_tokens
        self.token_embedding = Embedding(vocab_size, config.d, rng)
        self.position_embedding = Embedding(config.max_tokens, config.d, rng)
        self.norm = LayerNorm(config.d, config.ln_eps)
        self.blocks = [EncoderBlock(config.d, config.text_heads, config.ff_dim, config.ln_eps, rng,
                                    config.dropout, field="model.text_heads")
                       for _ in range(config.text_layers)]

    def forward(self, token_ids: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
        token_ids = np.asarray(token_ids, dtype=np.int64)
        length = token_ids.shape[1]
        if length > self.max_tokens:
            raise InputValidationError(f"{length} tokens exceed max_tokens={self.max_tokens}; truncate first")
        positions = np.broadcast_to(np.arange(length), token_ids.shape)
        x = self.norm(self.token_embedding(token_ids) + self.position_embedding(positions))
        for block in self.blocks:
            x = block(x, mask)
        return x


class EmotionEmbedding(Module):
    """3 × d table, one row per emotion category (urgent, commanding, informative)."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.table = Parameter(uniform_init(rng, (len(EmotionCategory), d), d))

    def forward(self, rows: np.ndarray) -> Tensor:
        """(B,) category rows -> (B, 1, d)."""
        rows = np.asarray(rows, dtype=np.int64)
        return self.table[rows[:, None]]

    def embed(self, category: EmotionCategory) -> Tensor:
        return self.table[category.table_row]


class ContextEncoder(Module):
    """Patch transformer over the P×P grid, joined with o_text by a fusion block."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        patches = config.grid_size * config.grid_size
        self.patch_proj = Linear(config.patch_width, config.vision_width, rng)
        self.position = Parameter(uniform_init(rng, (patches, config.vision_width), config.vision_width))
        self.blocks = [EncoderBlock(config.vision_width, config.context_heads, config.ff_dim, config.ln_eps, rng,
                                    config.dropout, field="model.context_heads")
                       for _ in range(config.context_layers)]
        self.out_proj = Linear(config.vision_width, config.d, rng)
        self.fusion = EncoderBlock(config.d, config.context_heads, config.ff_dim, config.ln_eps, rng,
                                   config.dropout, field="model.context_heads")

    def encode_patches(self, patches: np.ndarray) -> Tensor:
        patches = np.asarray(patches, dtype=np.float64)
        if patches.shape[1] != self.position.shape[0]:
            raise DimensionError(f"{patches.shape[1]} patches, model expects {self.position.shape[0]} "
                                 f"(model.grid_size squared)")
        x = self.patch_proj(Tensor(patches)) + self.position
        for block in self.blocks:
            x = block(x)
        return self.out_proj(x)

    def forward(self, patches: np.ndarray, o_text: Tensor, text_mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Returns o_context (B, P² + T, d) and its row mask."""
        vision = self.encode_patches(patches)
        if vision.shape[-1] != o_text.shape[-1]:
            raise ConfigurationError(f"patch encoder width {vision.shape[-1]} does not match o_text width "
                                     f"{o_text.shape[-1]}", field="model.d")
        mask = np.concatenate([np.ones(vision.shape[:2], dtype=bool), np.asarray(text_mask, dtype=bool)], axis=1)
        return self.fusion(concat([vision, o_text], axis=1), mask), mask
