import numpy as np
import pytest

from app.core.errors import DimensionError, InputValidationError
from app.engine.random import Stream, make_rng
from app.models.encoders import Vocabulary
from app.models.state import ModelState
from app.repos.config_repo import config_repo
from app.schemas.scene import SplitLabel, SubsetTag
from app.schemas.synthetic import GeneratorParams
from app.services.dataset_service import split_dataset
from app.services.metrics_service import Evaluator, ap50, evaluate, iou
from app.services.synthetic_service import SyntheticSceneGenerator

RASTER_STEP = 0.001
CENTERS = (np.arange(1000) + 0.5) * RASTER_STEP


def random_box(rng: np.random.Generator) -> tuple:
    """Continuous box in the unit square with sides in [0.2, 0.8]."""
    w, h = rng.uniform(0.2, 0.8, size=2)
    x1, y1 = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
    return float(x1), float(y1), float(x1 + w), float(y1 + h)


def cells(lo: float, hi: float) -> int:
    """Cells of one raster axis whose centers fall strictly inside (lo, hi)."""
    return int(np.sum((CENTERS > lo) & (CENTERS < hi)))


class TestIoU:
    def test_identical(self):
        assert iou((1, 2, 5, 7), (1, 2, 5, 7)) == 1.0

    def test_disjoint_and_touching(self):
        assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
        assert iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0

    def test_partial_overlap(self):
        assert iou((0, 0, 2, 1), (1, 0, 3, 1)) == pytest.approx(1 / 3)

    def test_containment(self):
        assert iou((0, 0, 4, 4), (1, 1, 3, 3)) == pytest.approx(0.25)

    def test_symmetry(self):
        a, b = (0.5, 1.0, 4.0, 3.5), (2.0, 0.0, 6.0, 2.5)
        assert iou(a, b) == iou(b, a)

    def test_invalid_box(self):
        with pytest.raises(InputValidationError):
            iou((2, 0, 1, 1), (0, 0, 1, 1))

    def test_raster_one_seventh(self):
        step = 0.001
        centers = (np.arange(8000) + 0.5) * step
        in_a = (centers > 0) & (centers < 4)
        in_b = (centers > 3) & (centers < 7)
        raster = np.sum(in_a & in_b) / np.sum(in_a | in_b)
        assert raster == pytest.approx(1 / 7, abs=1e-3)
        assert iou((0, 0, 4, 1), (3, 0, 7, 1)) == pytest.approx(raster, abs=1e-3)

    def test_matches_raster_counts(self):
        rng = make_rng(0, Stream.GRAD_CHECK)
        errors = []
        for _ in range(1000):
            a, b = random_box(rng), random_box(rng)
            # a box covers the product of its per-axis cell runs
            ax, ay = cells(a[0], a[2]), cells(a[1], a[3])
            bx, by = cells(b[0], b[2]), cells(b[1], b[3])
            ix, iy = cells(max(a[0], b[0]), min(a[2], b[2])), cells(max(a[1], b[1]), min(a[3], b[3]))
            raster = ix * iy / (ax * ay + bx * by - ix * iy)
            value = iou(a, b)
            # each continuous side lies within one cell of its count
            inter_lo, inter_hi = max(ix - 1, 0) * max(iy - 1, 0), (ix + 1) * (iy + 1)
            areas_lo = max(ax - 1, 0) * max(ay - 1, 0) + max(bx - 1, 0) * max(by - 1, 0)
            areas_hi = (ax + 1) * (ay + 1) + (bx + 1) * (by + 1)
            lower = inter_lo / (areas_hi - inter_lo)
            upper = 1.0 if areas_lo <= 2 * inter_hi else inter_hi / (areas_lo - inter_hi)
            assert lower - 1e-12 <= value <= upper + 1e-12
            errors.append(abs(value - raster))
        assert np.mean(errors) <= 2e-3

    def test_random_pairs_identity_and_symmetry(self):
        rng = make_rng(1, Stream.GRAD_CHECK)
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            assert iou(a, a) == 1.0
            assert iou(a, b) == iou(b, a)

    def test_scale_invariance(self):
        rng = make_rng(2, Stream.GRAD_CHECK)
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            s = float(10.0 ** rng.uniform(-3.0, 3.0))
            scaled = [tuple(v * s for v in box) for box in (a, b)]
            assert iou(*scaled) == pytest.approx(iou(a, b), abs=1e-12)


class TestAP50:
    def test_hits_and_misses(self):
        box = (0, 0, 2, 1)
        assert ap50([(box, box), ((5, 5, 6, 6), box)]) == 0.5

    def test_exactly_half_is_a_miss(self):
        assert iou((0, 0, 2, 1), (0, 0, 1, 1)) == 0.5
        assert ap50([((0, 0, 2, 1), (0, 0, 1, 1))]) == 0.0

    def test_matches_brute_force_count(self):
        rng = make_rng(3, Stream.GRAD_CHECK)
        pairs = []
        for i in range(400):
            truth = random_box(rng)
            if i % 2:
                shift = rng.uniform(-0.1, 0.1, size=4)
                predicted = tuple(float(v + d) for v, d in zip(truth, shift))
            else:
                predicted = random_box(rng)
            pairs.append((predicted, truth))
        hits = 0
        for (px1, py1, px2, py2), (gx1, gy1, gx2, gy2) in pairs:
            w = max(0.0, min(px2, gx2) - max(px1, gx1))
            h = max(0.0, min(py2, gy2) - max(py1, gy1))
            union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - w * h
            if w * h / union > 0.5:
                hits += 1
        assert 0 < hits < len(pairs)
        assert ap50(pairs) == hits / len(pairs)

    def test_empty(self):
        with pytest.raises(InputValidationError):
            ap50([])


class TestEvaluator:
    def test_report_cells(self, tiny_state, tiny_dataset):
        report = evaluate(tiny_state, tiny_dataset, split=None, longest=(3, 100))
        assert report.split == "all"
        assert report.scene_count == len(tiny_dataset.scenes)
        assert 0.0 <= report.overall_ap50 <= 1.0
        assert sum(report.counts.values()) >= report.scene_count
        assert report.longest_k_ap50[100] is None
        assert report.longest_k_ap50[3] is not None
        assert report.run_meta.dataset_digest == tiny_dataset.digest

    def test_empty_split_gives_absent_cells(self, tiny_state, tiny_dataset):
        report = evaluate(tiny_state, tiny_dataset, split=SplitLabel.TEST)
        assert report.scene_count == 0
        assert report.overall_ap50 is None
        assert all(value is None for value in report.per_subset_ap50.values())

    def test_subset_filter_without_members(self, tiny_state, tiny_params):
        params = tiny_params.model_copy(update={"long_text_rate": 0.0})
        dataset = SyntheticSceneGenerator(params).generate_dataset(seed=3, count=6)
        report = evaluate(tiny_state, dataset, split=None, subset_filter=SubsetTag.LONG_TEXT)
        assert report.scene_count == 0
        assert report.per_subset_ap50[SubsetTag.LONG_TEXT] is None

    def test_subset_filter_keeps_only_tagged(self, tiny_state, tiny_params):
        params = tiny_params.model_copy(update={"long_text_rate": 1.0})
        dataset = SyntheticSceneGenerator(params).generate_dataset(seed=3, count=6)
        report = evaluate(tiny_state, dataset, split=None, subset_filter=SubsetTag.LONG_TEXT)
        assert report.scene_count == 6
        assert report.counts[SubsetTag.LONG_TEXT] == 6

    def test_evaluation_is_deterministic(self, tiny_state, tiny_dataset):
        first = evaluate(tiny_state, tiny_dataset, split=None)
        second = evaluate(tiny_state, tiny_dataset, split=None)
        assert first.comparable() == second.comparable()

    def test_workers_do_not_change_results(self, tiny_state, tiny_dataset):
        serial = Evaluator(tiny_state, workers=1, batch_size=4).evaluate(tiny_dataset, split=None)
        parallel = Evaluator(tiny_state, workers=2, batch_size=4).evaluate(tiny_dataset, split=None)
        assert serial.comparable() == parallel.comparable()

    def test_split_selection(self, tiny_state, tiny_dataset):
        split = split_dataset(tiny_dataset, (0.5, 0.25, 0.25), seed=0)
        assert evaluate(tiny_state, split, split=SplitLabel.TEST).scene_count == 3

    def test_incompatible_dataset(self, tiny_state):
        params = GeneratorParams(n_regions=4, grid_size=2, patch_size=16, patch_width=16, d_vision=32)
        dataset = SyntheticSceneGenerator(params).generate_dataset(seed=0, count=2)
        with pytest.raises(DimensionError):
            evaluate(tiny_state, dataset, split=None)


@pytest.mark.slow
def test_untrained_model_is_near_chance():
    dataset = SyntheticSceneGenerator().generate_dataset(seed=21, count=500)
    config = config_repo.resolve(preset="desk")
    vocabulary = Vocabulary.build(scene.command.text for scene in dataset.scenes)
    state = ModelState.initialize(config, vocabulary, dataset_digest=dataset.digest)
    report = evaluate(state, dataset, split=None)
    assert abs(report.overall_ap50 - 0.125) <= 0.1
