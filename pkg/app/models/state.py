# app/models/state.py

from dataclasses import dataclass
from typing import Optional

from app.engine.optim import OptimizerState
from app.models.cavg import CAVGModel
from app.models.encoders import Vocabulary
from app.schemas.run_config import TrainConfig


@dataclass
class ModelState:
    """A model with everything needed to reproduce, resume or evaluate it."""
    model: CAVGModel
    vocabulary: Vocabulary
    config: TrainConfig
    optimizer: Optional[OptimizerState] = None
    dataset_digest: Optional[str] = None
    digest: Optional[str] = None

    @classmethod
    def initialize(cls, config: TrainConfig, vocabulary: Vocabulary,
                   dataset_digest: Optional[str] = None) -> "ModelState":
        model = CAVGModel(config.model, len(vocabulary), seed=config.seed)
        return cls(model=model, vocabulary=vocabulary, config=config, dataset_digest=dataset_digest)
