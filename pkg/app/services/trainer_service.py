# app/services/trainer_service.py

import logging
import math
from typing import Callable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from app.core.digest import digest_object
from app.core.errors import CavgError, InputValidationError, NumericalError
from app.engine.functional import bce_loss
from app.engine.optim import AdamW, OptimizerState, clip_grad_norm, lr_schedule
from app.engine.random import Stream, make_rng
from app.models.batch import EncodedSample, collate, encode_sample
from app.models.encoders import Vocabulary
from app.models.state import ModelState
from app.repos.config_repo import config_repo
from app.schemas.results import (EpochRecord, ReducedDataReport, ReducedDataRun, StepRecord, TrainLog,
                                 TrainLogHeader)
from app.schemas.run_config import TrainConfig
from app.schemas.scene import Dataset, SceneRecord, SplitLabel
from app.services.dataset_service import check_compatible, reduce_training, split_dataset
from app.services.emotion_service import EmotionClassifier, get_classifier, prepare_command
from app.services.metrics_service import Evaluator, iou

logger = logging.getLogger(__name__)

POSITIVE_IOU = 0.5
REDUCED_FRACTIONS = (0.5, 0.75, 1.0)

EventSink = Callable[[BaseModel], None]


def make_targets(scene: SceneRecord) -> np.ndarray:
    """1 for every region with IoU >= 0.5 against the ground truth, else the single best region."""
    overlaps = np.array([iou(box, scene.gt_box) for box in scene.boxes])
    labels = (overlaps >= POSITIVE_IOU).astype(np.float64)
    if not labels.any():
        labels[int(np.argmax(overlaps))] = 1.0
    return labels


def prepare_splits(config: TrainConfig, dataset: Dataset) -> Dataset:
    """Split an unsplit dataset with the config's fractions, then apply the training fraction."""
    if dataset.split_labels is None:
        return split_dataset(dataset, config.split, config.seed, reduce=config.fraction)
    if config.fraction < 1.0:
        return reduce_training(dataset, config.fraction, config.seed)
    return dataset


class Trainer:
    """Minibatch BCE training with AdamW and warm-restart cosine scheduling.

    Keeps the parameters of the epoch with the best validation ap50 (training
    ap50 when there is no validation split). Every step and epoch is emitted to
    `sink` as it happens.
    """

    def __init__(self, config: TrainConfig, classifier: Optional[EmotionClassifier] = None,
                 sink: Optional[EventSink] = None):
        self.config = config
        self.classifier = classifier or get_classifier(config.emotion_mode)
        self.sink = sink

    def _emit(self, log: TrainLog, record: BaseModel) -> None:
        if not isinstance(record, TrainLogHeader):
            log.events.append(record)
        if self.sink is not None:
            self.sink(record)

    def _encode(self, dataset: Dataset, indices: Sequence[int], vocabulary: Vocabulary,
                with_targets: bool) -> List[EncodedSample]:
        samples = []
        for i in indices:
            scene = dataset.scenes[i]
            command = prepare_command(scene.command.text, vocabulary, self.config.model.max_tokens,
                                      self.classifier, scene.command.emotion)
            samples.append(encode_sample(scene, command, make_targets(scene) if with_targets else None))
        return samples

    def train(self, dataset: Dataset) -> tuple[ModelState, TrainLog]:
        config = self.config
        dataset = prepare_splits(config, dataset)
        train_idx = dataset.indices(SplitLabel.TRAIN)
        val_idx = dataset.indices(SplitLabel.VAL)
        if not train_idx:
            raise InputValidationError("dataset has no training scenes")
        check_compatible(dataset, config.model)

        vocabulary = Vocabulary.build(dataset.scenes[i].command.text for i in train_idx)
        state = ModelState.initialize(config, vocabulary, dataset_digest=dataset.digest)
        model = state.model
        train_samples = self._encode(dataset, train_idx, vocabulary, with_targets=True)

        params = {name: p for name, p in model.named_parameters().items()
                  if not (config.freeze_emotion and name.startswith("emotion."))}
        optim = config.optim
        optimizer = AdamW(params, optim.beta1, optim.beta2, optim.eps, optim.weight_decay)
        state.optimizer = optimizer.state
        steps_per_epoch = math.ceil(len(train_samples) / config.batch_size)
        t_0 = optim.t_0 or steps_per_epoch

        flat = config_repo.to_flat(config)
        log = TrainLog(header=TrainLogHeader(seed=config.seed, config=flat, config_digest=digest_object(flat),
                                             dataset_digest=dataset.digest, train_size=len(train_idx),
                                             val_size=len(val_idx)))
        self._emit(log, log.header)
        logger.info(f"Training on {len(train_idx)} scenes ({len(val_idx)} val), {config.epochs} epochs "
                    f"x {steps_per_epoch} steps, {sum(p.size for p in params.values())} trainable values")

        best_score: Optional[float] = None
        best_arrays = model.state_arrays()
        best_optimizer = _copy_optimizer(optimizer.state)
        evaluator = Evaluator(state, self.classifier, workers=1)
        step = 0
        for epoch in range(config.epochs):
            model.train()
            model.set_dropout_rng(make_rng(config.seed, Stream.DROPOUT, epoch))
            order = make_rng(config.seed, Stream.SHUFFLE, epoch).permutation(len(train_samples))
            for start in range(0, len(order), config.batch_size):
                batch = collate([train_samples[i] for i in order[start:start + config.batch_size]])
                lr = lr_schedule(step, t_0, optim.t_mult, optim.lr_min, optim.lr)
                try:
                    output = model(batch)
                    loss = bce_loss(output.logits.sigmoid(), batch.labels, mask=batch.region_mask)
                    optimizer.zero_grad()
                    loss.backward()
                except NumericalError as e:
                    raise NumericalError(f"non-finite loss at step {step} for scenes {batch.scene_ids}: {e}") from e
                grad_norm = clip_grad_norm(params, optim.grad_clip)
                optimizer.step(lr)
                self._emit(log, StepRecord(step=step, epoch=epoch, loss=loss.item(), lr=lr, grad_norm=grad_norm))
                logger.debug(f"step {step}: loss {loss.item():.5f} lr {lr:.3g} grad-norm {grad_norm:.3f}")
                step += 1

            model.eval()
            train_ap50 = evaluator.evaluate(dataset, SplitLabel.TRAIN).overall_ap50
            val_ap50 = evaluator.evaluate(dataset, SplitLabel.VAL).overall_ap50 if val_idx else None
            score = val_ap50 if val_ap50 is not None else train_ap50
            improved = best_score is None or score > best_score
            if improved:
                best_score = score
                best_arrays = model.state_arrays()
                best_optimizer = _copy_optimizer(optimizer.state)
            self._emit(log, EpochRecord(epoch=epoch, step=step, train_ap50=train_ap50, val_ap50=val_ap50,
                                        best=improved))
            logger.info(f"Epoch {epoch}: train ap50 {train_ap50:.3f}"
                        + (f", val ap50 {val_ap50:.3f}" if val_ap50 is not None else "")
                        + (" (best)" if improved else ""))

        model.load_state_arrays(best_arrays)
        model.eval()
        state.optimizer = best_optimizer
        return state, log


def _copy_optimizer(state: OptimizerState) -> OptimizerState:
    return OptimizerState(beta1=state.beta1, beta2=state.beta2, eps=state.eps, weight_decay=state.weight_decay,
                          step=state.step,
                          first_moment={k: v.copy() for k, v in state.first_moment.items()},
                          second_moment={k: v.copy() for k, v in state.second_moment.items()})


def train(config: TrainConfig, dataset: Dataset, sink: Optional[EventSink] = None) -> tuple[ModelState, TrainLog]:
    return Trainer(config, sink=sink).train(dataset)


def run_reduced_data_suite(config: TrainConfig, dataset: Dataset,
                           fractions: Sequence[float] = REDUCED_FRACTIONS,
                           on_state: Optional[Callable[[float, ModelState, TrainLog], None]] = None) -> ReducedDataReport:
    """Train once per training fraction on one shared split and evaluate each on the same test scenes.

    A failing run is recorded and the suite moves on.
    """
    base = split_dataset(dataset, config.split, config.seed) if dataset.split_labels is None else dataset
    test_idx = base.indices(SplitLabel.TEST)
    if not test_idx:
        raise InputValidationError("reduced-data suite needs a non-empty test split")
    test_digest = base.subset_digest(test_idx)
    runs = []
    for fraction in fractions:
        run_config = config.model_copy(update={"fraction": fraction})
        train_size = math.floor(fraction * len(base.indices(SplitLabel.TRAIN)) + 1e-9)
        try:
            state, log = Trainer(run_config).train(base)
            report = Evaluator(state).evaluate(base, SplitLabel.TEST)
            runs.append(ReducedDataRun(fraction=fraction, train_size=log.header.train_size, report=report))
            if on_state is not None:
                on_state(fraction, state, log)
        except CavgError as e:
            logger.error(f"Reduced-data run at fraction {fraction} failed: {e}")
            runs.append(ReducedDataRun(fraction=fraction, train_size=train_size, error=str(e)))
    return ReducedDataReport(test_digest=test_digest, runs=runs)
