import numpy as np
import pytest

from app.core.errors import GenerationError, InputValidationError
from app.schemas.run_config import ModelConfig
from app.schemas.scene import EmotionCategory
from app.schemas.synthetic import GeneratorParams
from app.services.dataset_service import check_compatible
from app.services.emotion_service import RuleBasedEmotionClassifier
from app.services.metrics_service import iou
from app.services.synthetic_service import SyntheticSceneGenerator, describe, generate_synthetic_scene


def test_same_seed_same_scene():
    first = generate_synthetic_scene(5, index=3)
    second = generate_synthetic_scene(5, index=3)
    assert first.model_dump() == second.model_dump()


def test_scene_depends_only_on_seed_and_index():
    generator = SyntheticSceneGenerator()
    dataset = generator.generate_dataset(seed=5, count=10)
    assert dataset.scenes[7].model_dump() == generator.generate_scene(5, 7).model_dump()
    assert dataset.scenes[7].model_dump() != generator.generate_scene(6, 7).model_dump()


def test_ground_truth_is_the_target_box():
    for scene in SyntheticSceneGenerator().generate_dataset(seed=1, count=20).scenes:
        assert scene.gt_box == scene.regions[scene.target_index].box
        assert len(scene.regions) == 8
        assert scene.patch_grid.P == 4


def test_regions_are_distinct_without_noise():
    params = GeneratorParams(noise=0.0, low_light_rate=0.0)
    for scene in SyntheticSceneGenerator(params).generate_dataset(seed=2, count=10).scenes:
        rows = {tuple(region.features) for region in scene.regions}
        assert len(rows) == len(scene.regions)


def test_command_names_the_target():
    params = GeneratorParams(noise=0.0, low_light_rate=0.0)
    for scene in SyntheticSceneGenerator(params).generate_dataset(seed=4, count=10).scenes:
        features = np.array(scene.regions[scene.target_index].features)
        colors, kinds = len(params.colors), len(params.kinds)
        color = int(np.argmax(features[:colors]))
        kind = int(np.argmax(features[colors:colors + kinds]))
        zone = int(np.argmax(features[colors + kinds:colors + kinds + len(params.zones)]))
        assert describe(params.colors[color], params.kinds[kind], params.zones[zone]) in scene.command.text


def test_emotion_templates_cover_every_category():
    params = GeneratorParams(emotion_templates=True, long_text_rate=0.0)
    classifier = RuleBasedEmotionClassifier()
    scenes = SyntheticSceneGenerator(params).generate_dataset(seed=7, count=60).scenes
    labels = {classifier.classify(scene.command.text) for scene in scenes}
    assert labels == set(EmotionCategory)


def test_hurry_wrap_is_urgent():
    params = GeneratorParams(emotion_templates=True)
    scenes = SyntheticSceneGenerator(params).generate_dataset(seed=7, count=150).scenes
    hurried = [scene for scene in scenes if scene.command.text.startswith("Hurry!")]
    assert hurried
    classifier = RuleBasedEmotionClassifier()
    assert all(classifier.classify(scene.command.text) == EmotionCategory.URGENT for scene in hurried)


def test_overlap_rate_moves_same_zone_regions_onto_target():
    params = GeneratorParams(overlap_rate=1.0, noise=0.0, low_light_rate=0.0)
    zones = len(params.zones)
    offset = len(params.colors) + len(params.kinds)
    for scene in SyntheticSceneGenerator(params).generate_dataset(seed=8, count=10).scenes:
        zone_of = [int(np.argmax(r.features[offset:offset + zones])) for r in scene.regions]
        for i, region in enumerate(scene.regions):
            if i != scene.target_index and zone_of[i] == zone_of[scene.target_index]:
                assert iou(region.box, scene.gt_box) > 0


def test_ambiguity_plants_twins():
    params = GeneratorParams(ambiguity_rate=1.0)
    scenes = SyntheticSceneGenerator(params).generate_dataset(seed=9, count=20).scenes
    assert sum(scene.meta.ambiguous for scene in scenes) > 10


def test_low_light_marks_scenes():
    params = GeneratorParams(low_light_rate=1.0, noise=0.0)
    scenes = SyntheticSceneGenerator(params).generate_dataset(seed=10, count=5).scenes
    assert all(scene.meta.low_light for scene in scenes)
    assert all(row[0] < 0.3 for scene in scenes for row in scene.patch_grid.rows)


@pytest.mark.parametrize("params", [
    GeneratorParams(n_regions=100),
    GeneratorParams(d_vision=5),
    GeneratorParams(patch_width=4),
    GeneratorParams(colors=[]),
])
def test_impossible_parameters(params):
    with pytest.raises(GenerationError):
        SyntheticSceneGenerator(params)


def test_empty_dataset_rejected():
    with pytest.raises(InputValidationError):
        SyntheticSceneGenerator().generate_dataset(seed=0, count=0)


def test_params_sized_for_a_model():
    model = ModelConfig(n_regions=5, grid_size=3, patch_size=10, d_vision=32)
    params = GeneratorParams.for_model(model, noise=0.0)
    dataset = SyntheticSceneGenerator(params).generate_dataset(seed=2, count=3)
    check_compatible(dataset, model)
    for scene in dataset.scenes:
        assert len(scene.regions) == 5
        assert scene.patch_grid.P == 3
        assert tuple(scene.image_size) == (30.0, 30.0)
        assert all(0.0 <= v <= 30.0 for region in scene.regions for v in region.box)
