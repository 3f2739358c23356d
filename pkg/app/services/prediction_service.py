# app/services/prediction_service.py

import logging
from typing import List, Optional, Sequence

import numpy as np

from app.core.errors import InputValidationError
from app.engine.tensor import no_grad
from app.models.batch import EncodedSample, collate, encode_sample
from app.models.cavg import ModelOutput
from app.models.state import ModelState
from app.schemas.results import Prediction
from app.schemas.scene import SceneRecord
from app.services.emotion_service import EmotionClassifier, prepare_command

logger = logging.getLogger(__name__)


def rank_regions(credibility: Sequence[float]) -> List[int]:
    """Indices by descending credibility; equal scores keep the lower index first."""
    return sorted(range(len(credibility)), key=lambda i: (-credibility[i], i))


class PredictionService:
    """Read-only inference over a ModelState; safe to share between worker threads."""

    def __init__(self, state: ModelState, classifier: Optional[EmotionClassifier] = None):
        self.state = state
        self.classifier = classifier
        state.model.eval()

    def encode(self, scene: SceneRecord, text: Optional[str] = None) -> EncodedSample:
        label = scene.command.emotion if text is None else None
        command = prepare_command(text if text is not None else scene.command.text,
                                  self.state.vocabulary, self.state.config.model.max_tokens,
                                  self.classifier, label)
        return encode_sample(scene, command)

    def run(self, samples: Sequence[EncodedSample]) -> ModelOutput:
        with no_grad():
            return self.state.model(collate(samples))

    def credibility(self, samples: Sequence[EncodedSample]) -> List[np.ndarray]:
        """Per-sample credibility vectors, trimmed to each scene's region count."""
        scores = self.run(samples).credibility.data
        return [scores[i, :len(sample.boxes)].copy() for i, sample in enumerate(samples)]

    def predict(self, scene: SceneRecord, text: Optional[str] = None, k: int = 1,
                dataset_digest: Optional[str] = None) -> Prediction:
        n_regions = len(scene.regions)
        if not 1 <= k <= n_regions:
            raise InputValidationError(f"k must be within 1..{n_regions}, got {k}")
        sample = self.encode(scene, text)
        credibility = self.credibility([sample])[0]
        ranked = rank_regions(credibility.tolist())
        prediction = Prediction(scene_id=scene.id,
                                command=text if text is not None else scene.command.text,
                                emotion=sample.emotion,
                                k=k,
                                credibility=credibility.tolist(),
                                ranked_regions=ranked,
                                top_k=ranked[:k],
                                selected_box=list(scene.regions[ranked[0]].box),
                                checkpoint_digest=self.state.digest,
                                dataset_digest=dataset_digest,
                                scene_digest=scene.digest)
        logger.debug(f"Scene {scene.id}: region {ranked[0]} selected ({credibility[ranked[0]]:.4f})")
        return prediction


def predict(state: ModelState, scene: SceneRecord, text: Optional[str] = None, k: int = 1,
            classifier: Optional[EmotionClassifier] = None, dataset_digest: Optional[str] = None) -> Prediction:
    return PredictionService(state, classifier).predict(scene, text, k, dataset_digest)
