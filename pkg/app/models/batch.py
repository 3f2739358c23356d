# app/models/batch.py

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from app.core.errors import DimensionError, InputValidationError
from app.models.encoders import PAD_ID, load_region_features
from app.schemas.scene import Box, Command, EmotionCategory, SceneRecord


@dataclass
class EncodedSample:
    scene_id: str
    token_ids: np.ndarray       # (T,)
    emotion: EmotionCategory
    region_features: np.ndarray # (N, d_vision)
    patches: np.ndarray         # (P², patch_width)
    boxes: List[Box]
    gt_box: Box
    labels: Optional[np.ndarray] = None


@dataclass
class Batch:
    scene_ids: List[str]
    token_ids: np.ndarray       # (B, T), PAD_ID beyond each command
    text_mask: np.ndarray       # (B, T) bool
    emotion_rows: np.ndarray    # (B,)
    region_features: np.ndarray # (B, N, d_vision), zero rows beyond each scene
    region_mask: np.ndarray     # (B, N) bool
    patches: np.ndarray         # (B, P², patch_width)
    boxes: List[List[Box]]
    gt_boxes: List[Box]
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.scene_ids)


def encode_sample(scene: SceneRecord, command: Command, labels: Optional[np.ndarray] = None) -> EncodedSample:
    if command.emotion is None:
        raise InputValidationError(f"command for scene '{scene.id}' has no emotion category")
    if not command.tokens:
        raise InputValidationError(f"command for scene '{scene.id}' has no tokens")
    return EncodedSample(scene_id=scene.id,
                         token_ids=np.asarray(command.tokens, dtype=np.int64),
                         emotion=command.emotion,
                         region_features=load_region_features(scene),
                         patches=np.asarray(scene.patch_grid.rows, dtype=np.float64),
                         boxes=list(scene.boxes),
                         gt_box=scene.gt_box,
                         labels=labels)


def collate(samples: Sequence[EncodedSample]) -> Batch:
    """Pad token sequences and region lists to the batch maximum, with masks."""
    if not samples:
        raise InputValidationError("cannot collate an empty batch")
    widths = {s.region_features.shape[1] for s in samples}
    grids = {s.patches.shape for s in samples}
    if len(widths) != 1 or len(grids) != 1:
        raise DimensionError(f"batch mixes region widths {sorted(widths)} or patch grids {sorted(grids)}")
    size = len(samples)
    max_tokens = max(len(s.token_ids) for s in samples)
    max_regions = max(len(s.region_features) for s in samples)

    token_ids = np.full((size, max_tokens), PAD_ID, dtype=np.int64)
    text_mask = np.zeros((size, max_tokens), dtype=bool)
    region_features = np.zeros((size, max_regions, widths.pop()))
    region_mask = np.zeros((size, max_regions), dtype=bool)
    has_labels = all(s.labels is not None for s in samples)
    labels = np.zeros((size, max_regions)) if has_labels else None
    for i, sample in enumerate(samples):
        length, regions = len(sample.token_ids), len(sample.region_features)
        token_ids[i, :length] = sample.token_ids
        text_mask[i, :length] = True
        region_features[i, :regions] = sample.region_features
        region_mask[i, :regions] = True
        if has_labels:
            labels[i, :regions] = sample.labels

    return Batch(scene_ids=[s.scene_id for s in samples],
                 token_ids=token_ids,
                 text_mask=text_mask,
                 emotion_rows=np.array([s.emotion.table_row for s in samples], dtype=np.int64),
                 region_features=region_features,
                 region_mask=region_mask,
                 patches=np.stack([s.patches for s in samples]),
                 boxes=[s.boxes for s in samples],
                 gt_boxes=[s.gt_box for s in samples],
                 labels=labels)
