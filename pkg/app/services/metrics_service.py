# app/services/metrics_service.py

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import InputValidationError
from app.models.state import ModelState
from app.schemas.results import MetricsReport, RunMeta
from app.schemas.scene import Box, Dataset, SplitLabel, SubsetTag, check_box
from app.services.dataset_service import check_compatible, tag_scene
from app.services.emotion_service import EmotionClassifier
from app.services.prediction_service import PredictionService, rank_regions

logger = logging.getLogger(__name__)

AP_THRESHOLD = 0.5


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes on continuous coordinates."""
    for box in (a, b):
        try:
            check_box(box)
        except ValueError as e:
            raise InputValidationError(str(e)) from e
    inter_w = min(a[2], b[2]) - max(a[0], b[0])
    inter_h = min(a[3], b[3]) - max(a[1], b[1])
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    intersection = inter_w * inter_h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - intersection
    return intersection / union


def ap50(pairs: Sequence[Tuple[Box, Box]]) -> float:
    """Share of (predicted, ground truth) pairs whose IoU exceeds 0.5; exactly 0.5 is a miss."""
    if not pairs:
        raise InputValidationError("ap50 over an empty prediction list")
    hits = sum(1 for predicted, truth in pairs if iou(predicted, truth) > AP_THRESHOLD)
    return hits / len(pairs)


def _ap50_or_none(pairs: List[Tuple[Box, Box]]) -> Optional[float]:
    return ap50(pairs) if pairs else None


class Evaluator:
    def __init__(self, state: ModelState, classifier: Optional[EmotionClassifier] = None,
                 workers: Optional[int] = None, batch_size: Optional[int] = None):
        self.state = state
        self.service = PredictionService(state, classifier)
        self.workers = max(1, workers or settings.EVAL_WORKERS)
        self.batch_size = batch_size or state.config.eval_batch_size

    def selected_boxes(self, dataset: Dataset, indices: Sequence[int]) -> List[Box]:
        """Argmax-credibility box per scene, in `indices` order regardless of worker count."""
        samples = [self.service.encode(dataset.scenes[i]) for i in indices]
        chunks = [samples[start:start + self.batch_size] for start in range(0, len(samples), self.batch_size)]
        if self.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                scored = list(pool.map(self.service.credibility, chunks))
        else:
            scored = [self.service.credibility(chunk) for chunk in chunks]
        credibility = [scores for chunk in scored for scores in chunk]
        return [sample.boxes[rank_regions(scores.tolist())[0]] for sample, scores in zip(samples, credibility)]

    def evaluate(self, dataset: Dataset, split: Optional[SplitLabel] = SplitLabel.TEST,
                 subset_filter: Optional[SubsetTag] = None, longest: Sequence[int] = ()) -> MetricsReport:
        started = time.perf_counter()
        check_compatible(dataset, self.state.config.model)
        indices = list(range(len(dataset.scenes))) if split is None else dataset.indices(split)
        tags: List[Set[SubsetTag]] = [tag_scene(dataset.scenes[i]) for i in indices]
        if subset_filter is not None:
            kept = [(i, t) for i, t in zip(indices, tags) if subset_filter in t]
            indices, tags = [i for i, _ in kept], [t for _, t in kept]

        split_name = split.value if split is not None else "all"
        if not indices:
            logger.warning(f"No scenes in split '{split_name}' match subset {subset_filter}; report cells absent")
        boxes = self.selected_boxes(dataset, indices) if indices else []
        pairs = [(box, dataset.scenes[i].gt_box) for box, i in zip(boxes, indices)]
        ious = [iou(p, g) for p, g in pairs]

        per_subset, counts = {}, {}
        for tag in SubsetTag:
            members = [pair for pair, scene_tags in zip(pairs, tags) if tag in scene_tags]
            counts[tag] = len(members)
            per_subset[tag] = _ap50_or_none(members)

        by_length = sorted(range(len(indices)),
                           key=lambda j: (-len(dataset.scenes[indices[j]].command.text.split()), j))
        longest_k = {k: (_ap50_or_none([pairs[j] for j in by_length[:k]]) if k <= len(indices) else None)
                     for k in longest}

        report = MetricsReport(split=split_name,
                               subset_filter=subset_filter,
                               scene_count=len(indices),
                               overall_ap50=_ap50_or_none(pairs),
                               mean_iou=float(np.mean(ious)) if ious else None,
                               per_subset_ap50=per_subset,
                               counts=counts,
                               longest_k_ap50=longest_k,
                               run_meta=RunMeta(checkpoint_digest=self.state.digest,
                                                dataset_digest=dataset.digest,
                                                wall_clock_seconds=time.perf_counter() - started))
        logger.info(f"Evaluated {len(indices)} scenes on '{split_name}': ap50={report.overall_ap50}")
        return report


def evaluate(state: ModelState, dataset: Dataset, split: Optional[SplitLabel] = SplitLabel.TEST,
             subset_filter: Optional[SubsetTag] = None, longest: Sequence[int] = (),
             workers: Optional[int] = None, classifier: Optional[EmotionClassifier] = None) -> MetricsReport:
    return Evaluator(state, classifier, workers=workers).evaluate(dataset, split, subset_filter, longest)
