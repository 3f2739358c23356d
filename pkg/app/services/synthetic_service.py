# app/services/synthetic_service.py

import logging
from typing import List, Optional, Tuple

import numpy as np

from app.core.errors import GenerationError, InputValidationError
from app.engine.random import Stream, make_rng
from app.schemas.scene import (CommandRecord, Dataset, PatchGrid, RegionProposal, SceneMeta, SceneRecord)
from app.schemas.synthetic import GeneratorParams

logger = logging.getLogger(__name__)

ZONE_PHRASES = {"left": "on the left", "middle": "in the middle", "right": "on the right"}

COMMANDING_TEMPLATES = (
    "Park behind the {desc}.",
    "Pull over next to the {desc}.",
    "Drive up to the {desc} and park there.",
    "Follow the {desc}.",
    "Turn toward the {desc}.",
    "Drop me off near the {desc}.",
    "Pass the {desc} and pull over.",
    "Slow down next to the {desc}.",
)
INFORMATIVE_TEMPLATES = (
    "The {desc} is where I need to be.",
    "My destination is the {desc}.",
    "I think my friend is waiting in the {desc}.",
    "Our meeting point is next to the {desc}.",
)
URGENT_WRAPS = ("Hurry! {command}", "Hold on! {command}", "Quick, {lowered}", "Wait, {lowered}")
LONG_TEXT_TAILS = (
    "It has been a long day at the office and I really just want to get home, "
    "so please find a spot where we will not block anyone behind us.",
    "My kids are sleeping in the back seat, so I would appreciate a smooth and gentle approach "
    "somewhere close to the entrance of the building over there.",
)
LOW_LIGHT_THRESHOLD = 0.3


def describe(color: str, kind: str, zone: str) -> str:
    return f"{color} {kind} {ZONE_PHRASES.get(zone, 'at the ' + zone)}"


class SyntheticSceneGenerator:
    """Scenes whose command names exactly one region's (color, kind, zone) tuple.

    Region features carry one-hot attribute blocks, patch features carry zone
    occupancy and attribute counts, so the command -> region mapping is learnable.
    Scene `index` of seed `seed` depends on nothing else.
    """

    def __init__(self, params: Optional[GeneratorParams] = None):
        self.params = params or GeneratorParams()
        p = self.params
        if not p.colors or not p.kinds or not p.zones:
            raise GenerationError("attribute alphabet needs at least one color, kind and zone")
        combinations = len(p.colors) * len(p.kinds) * len(p.zones)
        if combinations < p.n_regions:
            raise GenerationError(f"{len(p.colors)} colors x {len(p.kinds)} kinds x {len(p.zones)} zones give "
                                  f"{combinations} distinct regions, {p.n_regions} requested")
        attribute_width = len(p.colors) + len(p.kinds) + len(p.zones)
        if attribute_width > p.d_vision:
            raise GenerationError(f"d_vision={p.d_vision} cannot hold {attribute_width} attribute features")
        if 2 + len(p.colors) + len(p.kinds) > p.patch_width:
            raise GenerationError(f"patch_width={p.patch_width} cannot hold {2 + len(p.colors) + len(p.kinds)} "
                                  f"occupancy features")
        self.image_side = float(p.grid_size * p.patch_size)

    def _attributes(self, rng: np.random.Generator) -> Tuple[List[Tuple[int, int, int]], int]:
        p = self.params
        shape = (len(p.colors), len(p.kinds), len(p.zones))
        picked = rng.choice(int(np.prod(shape)), size=p.n_regions, replace=False)
        tuples = [tuple(int(v) for v in np.unravel_index(int(flat), shape)) for flat in picked]
        target = int(rng.integers(p.n_regions))
        if p.n_regions > 1 and len(p.zones) > 1 and rng.random() < p.ambiguity_rate:
            color, kind, zone = tuples[target]
            taken = set(tuples)
            twins = [(color, kind, z) for z in range(len(p.zones)) if (color, kind, z) not in taken]
            if twins:
                slot = next(i for i in range(p.n_regions) if i != target)
                tuples[slot] = twins[int(rng.integers(len(twins)))]
        return tuples, target

    def _box(self, rng: np.random.Generator, zone: int) -> Tuple[float, float, float, float]:
        band = self.image_side / len(self.params.zones)
        width = band * rng.uniform(0.4, 0.9)
        height = self.image_side * rng.uniform(0.15, 0.4)
        x1 = zone * band + rng.uniform(0.0, band - width)
        y1 = rng.uniform(0.0, self.image_side - height)
        return self._clip((x1, y1, x1 + width, y1 + height))

    def _overlapping_box(self, rng: np.random.Generator, box, zone: int) -> Tuple[float, float, float, float]:
        band = self.image_side / len(self.params.zones)
        x1, y1, x2, y2 = box
        dx = (x2 - x1) * rng.uniform(-0.2, 0.2)
        dy = (y2 - y1) * rng.uniform(-0.2, 0.2)
        dx = min(max(dx, zone * band - x1), (zone + 1) * band - x2)
        dy = min(max(dy, -y1), self.image_side - y2)
        return self._clip((x1 + dx, y1 + dy, x2 + dx, y2 + dy))

    def _clip(self, box) -> Tuple[float, float, float, float]:
        return tuple(float(min(max(v, 0.0), self.image_side)) for v in box)

    def _region_features(self, rng: np.random.Generator, attrs: Tuple[int, int, int], scale: float) -> List[float]:
        p = self.params
        color, kind, zone = attrs
        features = np.zeros(p.d_vision)
        features[color] = 1.0
        features[len(p.colors) + kind] = 1.0
        features[len(p.colors) + len(p.kinds) + zone] = 1.0
        features *= scale
        features += p.noise * rng.standard_normal(p.d_vision)
        return features.tolist()

    def _patch_rows(self, rng: np.random.Generator, boxes, attrs, brightness: float) -> List[List[float]]:
        p = self.params
        rows = []
        for row in range(p.grid_size):
            for col in range(p.grid_size):
                px1, py1 = col * p.patch_size, row * p.patch_size
                px2, py2 = px1 + p.patch_size, py1 + p.patch_size
                features = np.zeros(p.patch_width)
                features[0] = brightness
                for (x1, y1, x2, y2), (color, kind, _) in zip(boxes, attrs):
                    overlap = max(0.0, min(x2, px2) - max(x1, px1)) * max(0.0, min(y2, py2) - max(y1, py1))
                    if overlap <= 0:
                        continue
                    features[1] += overlap / (p.patch_size * p.patch_size)
                    features[2 + color] += 1.0
                    features[2 + len(p.colors) + kind] += 1.0
                features[1] = min(features[1], 1.0)
                features += p.noise * rng.standard_normal(p.patch_width)
                rows.append(features.tolist())
        return rows

    def _command(self, rng: np.random.Generator, desc: str) -> str:
        p = self.params
        style = int(rng.integers(3)) if p.emotion_templates else 1
        if style == 2:
            text = INFORMATIVE_TEMPLATES[int(rng.integers(len(INFORMATIVE_TEMPLATES)))].format(desc=desc)
        else:
            text = COMMANDING_TEMPLATES[int(rng.integers(len(COMMANDING_TEMPLATES)))].format(desc=desc)
            if style == 0:
                wrap = URGENT_WRAPS[int(rng.integers(len(URGENT_WRAPS)))]
                text = wrap.format(command=text, lowered=text[0].lower() + text[1:])
        if rng.random() < p.long_text_rate:
            text = f"{text} {LONG_TEXT_TAILS[int(rng.integers(len(LONG_TEXT_TAILS)))]}"
        return text

    def generate_scene(self, seed: int, index: int = 0) -> SceneRecord:
        p = self.params
        rng = make_rng(seed, Stream.SCENE, index)
        tuples, target = self._attributes(rng)
        low_light = rng.random() < p.low_light_rate
        brightness = rng.uniform(0.05, 0.29) if low_light else rng.uniform(0.4, 1.0)
        scale = 0.5 + 0.5 * brightness if low_light else 1.0

        boxes = [self._box(rng, zone) for _, _, zone in tuples]
        if p.overlap_rate > 0:
            for i, (_, _, zone) in enumerate(tuples):
                if i != target and zone == tuples[target][2] and rng.random() < p.overlap_rate:
                    boxes[i] = self._overlapping_box(rng, boxes[target], zone)

        regions = [RegionProposal(box=box, features=self._region_features(rng, attrs, scale))
                   for box, attrs in zip(boxes, tuples)]
        color, kind, zone = tuples[target]
        desc = describe(p.colors[color], p.kinds[kind], p.zones[zone])
        text = self._command(rng, desc)
        agents = sum(1 for _, k, _ in tuples if p.kinds[k] in p.agent_kinds)
        ambiguous = any(i != target and t[:2] == (color, kind) for i, t in enumerate(tuples))

        return SceneRecord(id=f"scene-{index:05d}",
                           image_size=(self.image_side, self.image_side),
                           patch_grid=PatchGrid(P=p.grid_size, width=p.patch_width,
                                                rows=self._patch_rows(rng, boxes, tuples, brightness)),
                           regions=regions,
                           command=CommandRecord(text=text),
                           gt_box=boxes[target],
                           target_index=target,
                           meta=SceneMeta(low_light=brightness < LOW_LIGHT_THRESHOLD,
                                          agent_count=agents,
                                          ambiguous=ambiguous))

    def generate_dataset(self, seed: int, count: int) -> Dataset:
        if count < 1:
            raise InputValidationError(f"scene count must be at least 1, got {count}")
        scenes = [self.generate_scene(seed, index) for index in range(count)]
        logger.info(f"Generated {count} synthetic scenes (seed {seed})")
        return Dataset(provenance={"generator": "synthetic", "seed": seed, "params": self.params.model_dump()},
                       scenes=scenes)


def generate_synthetic_scene(seed: int, params: Optional[GeneratorParams] = None, index: int = 0) -> SceneRecord:
    return SyntheticSceneGenerator(params).generate_scene(seed, index)
