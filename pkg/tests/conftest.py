from typing import List, Optional, Sequence

import pytest

from app.models.batch import collate
from app.models.encoders import Vocabulary
from app.models.state import ModelState
from app.repos.config_repo import config_repo
from app.schemas.run_config import ModelConfig, TrainConfig
from app.schemas.scene import (CommandRecord, Dataset, EmotionCategory, PatchGrid, RegionProposal, SceneMeta,
                               SceneRecord)
from app.schemas.synthetic import GeneratorParams
from app.services.prediction_service import PredictionService
from app.services.synthetic_service import SyntheticSceneGenerator

TINY_MODEL = dict(d=16, d_vision=16, patch_width=16, grid_size=2, n_regions=4, vision_width=16, max_tokens=60,
                  text_layers=1, text_heads=2, context_layers=1, context_heads=2, cross_heads=2, cross_width=16,
                  fusion_heads=2, decoder_layers=2, decoder_heads=2, ff_dim=32)


def make_scene(boxes: Sequence[Sequence[float]], gt_box: Sequence[float], text: str = "Park behind the red car.",
               scene_id: str = "scene-0", target_index: int = 0, d_vision: int = 4, image_side: float = 100.0,
               meta: Optional[SceneMeta] = None, emotion: Optional[EmotionCategory] = None) -> SceneRecord:
    """Hand-built scene with deterministic features (region i has value i + 1 in slot i % d_vision)."""
    regions = []
    for i, box in enumerate(boxes):
        features = [0.0] * d_vision
        features[i % d_vision] = float(i + 1)
        regions.append(RegionProposal(box=tuple(box), features=features))
    return SceneRecord(id=scene_id,
                       image_size=(image_side, image_side),
                       patch_grid=PatchGrid(P=1, width=2, rows=[[0.5, 0.25]]),
                       regions=regions,
                       command=CommandRecord(text=text, emotion=emotion),
                       gt_box=tuple(gt_box),
                       target_index=target_index,
                       meta=meta or SceneMeta())


def tiny_train_config(**overrides) -> TrainConfig:
    data = {"epochs": 1, "batch_size": 4, "eval_batch_size": 16, "model": dict(TINY_MODEL)}
    data.update(overrides)
    return TrainConfig.model_validate(data)


@pytest.fixture
def tiny_params() -> GeneratorParams:
    return GeneratorParams(n_regions=4, grid_size=2, patch_size=16, patch_width=16, d_vision=16)


@pytest.fixture
def tiny_dataset(tiny_params) -> Dataset:
    return SyntheticSceneGenerator(tiny_params).generate_dataset(seed=3, count=12)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return tiny_train_config()


@pytest.fixture
def tiny_state(tiny_config, tiny_dataset) -> ModelState:
    vocabulary = Vocabulary.build(scene.command.text for scene in tiny_dataset.scenes)
    return ModelState.initialize(tiny_config, vocabulary, dataset_digest=tiny_dataset.digest)


@pytest.fixture
def tiny_batch(tiny_state, tiny_dataset):
    service = PredictionService(tiny_state)
    return collate([service.encode(scene) for scene in tiny_dataset.scenes[:3]])


@pytest.fixture
def tiny_config_file(tmp_path, tiny_config) -> str:
    path = str(tmp_path / "tiny.cfg")
    config_repo.save(tiny_config, path)
    return path


@pytest.fixture(scope="session")
def overfit_run():
    """Desk model trained to convergence on 32 planted scenes (all used for training)."""
    from app.services.trainer_service import Trainer

    params = GeneratorParams(emotion_templates=True)
    dataset = SyntheticSceneGenerator(params).generate_dataset(seed=11, count=32)
    config = config_repo.resolve(preset="desk", assignments=["split=1.0,0.0,0.0"])
    state, log = Trainer(config).train(dataset)
    return state, log, dataset


def scene_ids(dataset: Dataset, indices: List[int]) -> set:
    return {dataset.scenes[i].id for i in indices}
