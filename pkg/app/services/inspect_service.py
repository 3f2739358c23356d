# app/services/inspect_service.py

import logging
from typing import List, Optional

import numpy as np

from app.models.state import ModelState
from app.schemas.results import AttentionDump, HeadMap, LayerWeightRow
from app.schemas.scene import SceneRecord
from app.services.emotion_service import EmotionClassifier
from app.services.metrics_service import iou
from app.services.prediction_service import PredictionService

logger = logging.getLogger(__name__)

OVERLAPPING = "iou>0"
DISJOINT = "iou=0"


def _group_means(rsd: np.ndarray, members: List[int]) -> List[Optional[float]]:
    if not members:
        return [None] * rsd.shape[1]
    return [float(v) for v in rsd[members].mean(axis=0)]


def dump_layer_attention(state: ModelState, scene: SceneRecord, text: Optional[str] = None,
                         classifier: Optional[EmotionClassifier] = None,
                         dataset_digest: Optional[str] = None) -> AttentionDump:
    """RSD weights and cross-modal maps from one forward pass, plus per-layer means for
    regions overlapping the ground truth versus regions that miss it."""
    service = PredictionService(state, classifier)
    sample = service.encode(scene, text)
    output = service.run([sample])
    n_regions = len(scene.regions)
    rsd = output.rsd_weights.data[0, :n_regions]
    depth = rsd.shape[1]

    pieces = [state.vocabulary.token(int(i)) for i in sample.token_ids]
    region_labels = [f"region-{i}" for i in range(n_regions)]
    text_labels = [f"<{sample.emotion.value}>", *pieces]
    if state.config.model.qk_swap:
        query_labels, key_labels = text_labels, region_labels
    else:
        query_labels, key_labels = region_labels, text_labels
    maps = [head[:len(query_labels), :len(key_labels)] for head in output.cross_modal.attention_maps(0)]

    overlaps = [iou(box, scene.gt_box) for box in scene.boxes]
    groups = {
        OVERLAPPING: _group_means(rsd, [i for i, v in enumerate(overlaps) if v > 0]),
        DISJOINT: _group_means(rsd, [i for i, v in enumerate(overlaps) if v == 0]),
    }
    plot_table = [LayerWeightRow(layer_index=layer, group=group, mean_weight=values[layer])
                  for group, values in groups.items() for layer in range(depth)]
    logger.debug(f"Attention dump for {scene.id}: {n_regions} regions x {depth} layers")
    return AttentionDump(scene_id=scene.id,
                         command=text if text is not None else scene.command.text,
                         emotion=sample.emotion,
                         checkpoint_digest=state.digest,
                         dataset_digest=dataset_digest,
                         scene_digest=scene.digest,
                         region_labels=region_labels,
                         layer_indices=list(range(depth)),
                         query_labels=query_labels,
                         key_labels=key_labels,
                         rsd=rsd.tolist(),
                         cross_modal=[HeadMap(head=h, probabilities=m.tolist()) for h, m in enumerate(maps)],
                         group_summary=groups,
                         plot_table=plot_table)
