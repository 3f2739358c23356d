# app/services/dataset_service.py

import logging
import math
from typing import List, Sequence, Set, Tuple

from app.core.errors import ConfigurationError, DimensionError, InputValidationError
from app.engine.random import Stream, make_rng
from app.schemas.run_config import ModelConfig
from app.schemas.scene import Dataset, SceneRecord, SplitLabel, SubsetTag

logger = logging.getLogger(__name__)

LONG_TEXT_WORDS = 23
MULTI_AGENT_THRESHOLD = 6
_FLOOR_SLACK = 1e-9


def _floor_share(fraction: float, total: int) -> int:
    return int(math.floor(fraction * total + _FLOOR_SLACK))


def fractions_from_counts(*counts: int) -> Tuple[float, ...]:
    """Fractions that reproduce `counts` exactly under the floor rule of `split_dataset`."""
    total = sum(counts)
    if total <= 0 or any(c < 0 for c in counts):
        raise InputValidationError(f"split counts must be non-negative with a positive total, got {counts}")
    return tuple(c / total for c in counts)


def split_dataset(dataset: Dataset, fractions: Sequence[float], seed: int, reduce: float = 1.0) -> Dataset:
    """Seeded shuffle, then contiguous train / val / test blocks.

    Train and val get floor(f·n) scenes. When the fractions sum to one the test
    block takes every remaining scene, otherwise floor(f·n) and the rest is unused.
    `reduce` keeps a prefix of the shuffled training block, so smaller fractions
    are subsets of larger ones; val and test are untouched.
    """
    if len(fractions) != 3:
        raise ConfigurationError(f"expected train/val/test fractions, got {list(fractions)}", field="split")
    train_f, val_f, test_f = fractions
    if train_f <= 0 or val_f < 0 or test_f < 0:
        raise ConfigurationError(f"fractions must be train > 0 and val/test >= 0, got {list(fractions)}", field="split")
    total_f = train_f + val_f + test_f
    if total_f > 1.0 + _FLOOR_SLACK:
        raise ConfigurationError(f"fractions sum to {total_f} > 1", field="split")
    if not 0.0 < reduce <= 1.0:
        raise ConfigurationError(f"training fraction must be in (0, 1], got {reduce}", field="fraction")

    n = len(dataset.scenes)
    n_train = _floor_share(train_f, n)
    n_val = _floor_share(val_f, n)
    n_test = n - n_train - n_val if abs(total_f - 1.0) <= _FLOOR_SLACK else _floor_share(test_f, n)
    kept = _floor_share(reduce, n_train)
    if kept < 1:
        raise InputValidationError(f"training split of {n} scenes is empty (train={train_f}, fraction={reduce})")

    order = make_rng(seed, Stream.SPLIT).permutation(n)
    labels = [SplitLabel.UNUSED] * n
    for rank, index in enumerate(order):
        if rank < kept:
            labels[index] = SplitLabel.TRAIN
        elif rank < n_train:
            labels[index] = SplitLabel.UNUSED
        elif rank < n_train + n_val:
            labels[index] = SplitLabel.VAL
        elif rank < n_train + n_val + n_test:
            labels[index] = SplitLabel.TEST
    logger.info(f"Split {n} scenes: train {kept} (of {n_train}), val {n_val}, test {n_test}")
    return dataset.model_copy(update={"split_labels": labels})


def reduce_training(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep a seeded prefix of an existing training split; others are relabelled unused."""
    if dataset.split_labels is None:
        raise InputValidationError("dataset has no split to reduce")
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"training fraction must be in (0, 1], got {fraction}", field="fraction")
    train = dataset.indices(SplitLabel.TRAIN)
    kept = _floor_share(fraction, len(train))
    if kept < 1:
        raise InputValidationError(f"fraction {fraction} of {len(train)} training scenes is empty")
    order = make_rng(seed, Stream.SPLIT).permutation(len(train))
    labels = list(dataset.split_labels)
    for rank, position in enumerate(order):
        if rank >= kept:
            labels[train[position]] = SplitLabel.UNUSED
    return dataset.model_copy(update={"split_labels": labels})


def tag_scene(scene: SceneRecord) -> Set[SubsetTag]:
    tags = set()
    if len(scene.command.text.split()) > LONG_TEXT_WORDS:
        tags.add(SubsetTag.LONG_TEXT)
    if scene.meta.low_light:
        tags.add(SubsetTag.RESTRICTED)
    if scene.meta.agent_count >= MULTI_AGENT_THRESHOLD:
        tags.add(SubsetTag.MULTI_AGENT)
    if scene.meta.ambiguous:
        tags.add(SubsetTag.AMBIGUOUS_COMMAND)
    return tags or {SubsetTag.NORMAL}


def tag_subsets(dataset: Dataset) -> List[Set[SubsetTag]]:
    return [tag_scene(scene) for scene in dataset.scenes]


def check_compatible(dataset: Dataset, model: ModelConfig) -> None:
    """Raise DimensionError naming both sides when scenes do not fit the model's input widths."""
    data_dims = (dataset.d_vision, dataset.grid_size, dataset.patch_width)
    model_dims = (model.d_vision, model.grid_size, model.patch_width)
    if data_dims != model_dims:
        raise DimensionError(
            f"dataset has d_vision={data_dims[0]}, grid_size={data_dims[1]}, patch_width={data_dims[2]} but model "
            f"config has model.d_vision={model_dims[0]}, model.grid_size={model_dims[1]}, "
            f"model.patch_width={model_dims[2]}")
    if dataset.max_regions > model.n_regions:
        raise DimensionError(f"dataset has scenes with {dataset.max_regions} regions but model config has "
                             f"model.n_regions={model.n_regions}")
