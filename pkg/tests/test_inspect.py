import numpy as np
import pytest

from app.core.errors import InputValidationError
from app.models.state import ModelState
from app.schemas.scene import EmotionCategory
from app.services.inspect_service import DISJOINT, OVERLAPPING, dump_layer_attention
from app.services.prediction_service import PredictionService, predict, rank_regions


def test_dump_shapes(tiny_state, tiny_dataset):
    scene = tiny_dataset.scenes[0]
    dump = dump_layer_attention(tiny_state, scene)
    depth = tiny_state.config.model.decoder_layers + 1
    assert dump.layer_indices == list(range(depth))
    assert len(dump.rsd) == len(scene.regions)
    assert np.allclose(np.sum(dump.rsd, axis=1), 1.0, atol=1e-6)
    assert len(dump.cross_modal) == tiny_state.config.model.cross_heads
    assert len(dump.query_labels) == len(scene.regions)
    assert dump.key_labels[0] == f"<{dump.emotion.value}>"
    for head in dump.cross_modal:
        assert np.allclose(np.sum(head.probabilities, axis=1), 1.0, atol=1e-6)


def test_plot_table_has_both_groups(tiny_state, tiny_dataset):
    dump = dump_layer_attention(tiny_state, tiny_dataset.scenes[1])
    depth = tiny_state.config.model.decoder_layers + 1
    assert len(dump.plot_table) == 2 * depth
    assert {row.group for row in dump.plot_table} == {OVERLAPPING, DISJOINT}
    overlapping = [row.mean_weight for row in dump.plot_table if row.group == OVERLAPPING]
    assert overlapping == dump.group_summary[OVERLAPPING]
    assert sum(overlapping) == pytest.approx(1.0, abs=1e-6)


def test_command_override(tiny_state, tiny_dataset):
    dump = dump_layer_attention(tiny_state, tiny_dataset.scenes[0], text="Hurry! Park here.")
    assert dump.command == "Hurry! Park here."
    assert dump.emotion == EmotionCategory.URGENT


def test_swapped_roles_swap_labels(tiny_state, tiny_dataset):
    config = tiny_state.config.model_copy(update={"model": tiny_state.config.model.model_copy(update={"qk_swap": True})})
    state = ModelState.initialize(config, tiny_state.vocabulary)
    scene = tiny_dataset.scenes[0]
    dump = dump_layer_attention(state, scene)
    assert dump.key_labels == [f"region-{i}" for i in range(len(scene.regions))]
    assert len(dump.cross_modal[0].probabilities[0]) == len(scene.regions)


class TestPrediction:
    def test_ranking_ties_keep_lower_index(self):
        assert rank_regions([0.2, 0.5, 0.2, 0.1]) == [1, 0, 2, 3]

    def test_prediction_fields(self, tiny_state, tiny_dataset):
        scene = tiny_dataset.scenes[0]
        prediction = predict(tiny_state, scene, k=2)
        assert sum(prediction.credibility) == pytest.approx(1.0, abs=1e-6)
        assert prediction.top_k == prediction.ranked_regions[:2]
        assert sorted(prediction.ranked_regions) == list(range(len(scene.regions)))
        assert prediction.selected_box == list(scene.regions[prediction.ranked_regions[0]].box)

    def test_stored_emotion_is_used(self, tiny_state, tiny_dataset):
        scene = tiny_dataset.scenes[0]
        labelled = scene.model_copy(update={"command": scene.command.model_copy(update={"emotion": EmotionCategory.URGENT})})
        assert predict(tiny_state, labelled).emotion == EmotionCategory.URGENT

    def test_hurry_command_is_urgent(self, tiny_state, tiny_dataset):
        assert predict(tiny_state, tiny_dataset.scenes[0], text="Hurry! Park there.").emotion == EmotionCategory.URGENT

    def test_prediction_is_pure(self, tiny_state, tiny_dataset):
        scene = tiny_dataset.scenes[2]
        assert predict(tiny_state, scene).model_dump() == predict(tiny_state, scene).model_dump()

    def test_prediction_records_input_digests(self, tiny_state, tiny_dataset):
        scene = tiny_dataset.scenes[1]
        prediction = predict(tiny_state, scene, dataset_digest=tiny_dataset.digest)
        assert prediction.checkpoint_digest == tiny_state.digest
        assert prediction.dataset_digest == tiny_dataset.digest
        assert prediction.scene_digest == scene.digest
        assert predict(tiny_state, tiny_dataset.scenes[2]).scene_digest != scene.digest

    @pytest.mark.parametrize("k", [0, 5])
    def test_k_range(self, tiny_state, tiny_dataset, k):
        with pytest.raises(InputValidationError):
            predict(tiny_state, tiny_dataset.scenes[0], k=k)


def test_dump_records_input_digests(tiny_state, tiny_dataset):
    scene = tiny_dataset.scenes[3]
    dump = dump_layer_attention(tiny_state, scene, dataset_digest=tiny_dataset.digest)
    assert dump.checkpoint_digest == tiny_state.digest
    assert dump.dataset_digest == tiny_dataset.digest
    assert dump.scene_digest == scene.digest


def test_dump_maps_are_the_model_attention(tiny_state, tiny_dataset):
    scene = tiny_dataset.scenes[0]
    service = PredictionService(tiny_state)
    output = service.run([service.encode(scene)])
    dump = dump_layer_attention(tiny_state, scene)
    rows, cols = len(dump.query_labels), len(dump.key_labels)
    for head, expected in zip(dump.cross_modal, output.cross_modal.attention_maps(0)):
        assert np.allclose(head.probabilities, expected[:rows, :cols])
