from enum import Enum
from typing import Any, List, Optional, Tuple

from pydantic import BaseModel, Field, FiniteFloat, PositiveFloat, PrivateAttr, field_validator, model_validator

from app.core.digest import digest_object

Box = Tuple[FiniteFloat, FiniteFloat, FiniteFloat, FiniteFloat]


class EmotionCategory(str, Enum):
    URGENT = "urgent"
    COMMANDING = "commanding"
    INFORMATIVE = "informative"

    @property
    def table_row(self) -> int:
        """Row of this category in the emotion embedding table."""
        return list(EmotionCategory).index(self)


class SubsetTag(str, Enum):
    NORMAL = "normal"
    LONG_TEXT = "long-text"
    RESTRICTED = "restricted"
    MULTI_AGENT = "multi-agent"
    AMBIGUOUS_COMMAND = "ambiguous-command"

    @property
    def display_name(self) -> str:
        return SUBSET_TITLES[self]


SUBSET_TITLES = {
    SubsetTag.NORMAL: "Normal",
    SubsetTag.RESTRICTED: "Restricted",
    SubsetTag.MULTI_AGENT: "Multi-agent",
    SubsetTag.AMBIGUOUS_COMMAND: "Ambiguous Command",
    SubsetTag.LONG_TEXT: "Long-text",
}


class SplitLabel(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNUSED = "unused"


def check_box(box: Box) -> None:
    x1, y1, x2, y2 = box
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"box needs x1 < x2 and y1 < y2, got {list(box)}")


class RegionProposal(BaseModel):
    box: Box
    features: List[FiniteFloat] = Field(..., min_length=1)

    @field_validator("box")
    @classmethod
    def _valid_box(cls, box: Box) -> Box:
        check_box(box)
        return box


class PatchGrid(BaseModel):
    P: int = Field(..., ge=1)
    width: int = Field(..., ge=1)
    rows: List[List[FiniteFloat]]

    @model_validator(mode="after")
    def _grid_shape(self) -> "PatchGrid":
        if len(self.rows) != self.P * self.P:
            raise ValueError(f"patch_grid.rows has {len(self.rows)} rows, expected P*P = {self.P * self.P}")
        for i, row in enumerate(self.rows):
            if len(row) != self.width:
                raise ValueError(f"patch_grid.rows.{i} has length {len(row)}, expected width {self.width}")
        return self


class SceneMeta(BaseModel):
    low_light: bool = False
    agent_count: int = Field(0, ge=0)
    ambiguous: bool = False


class CommandRecord(BaseModel):
    text: str
    emotion: Optional[EmotionCategory] = None

    @field_validator("text")
    @classmethod
    def _non_empty(cls, text: str) -> str:
        if not text.strip():
            raise ValueError("command text is empty")
        return text


class SceneRecord(BaseModel):
    id: str
    image_size: Tuple[PositiveFloat, PositiveFloat]
    patch_grid: PatchGrid
    regions: List[RegionProposal] = Field(..., min_length=1)
    command: CommandRecord
    gt_box: Box
    target_index: int = Field(..., ge=0)
    meta: SceneMeta = SceneMeta()

    @field_validator("gt_box")
    @classmethod
    def _valid_gt(cls, box: Box) -> Box:
        check_box(box)
        return box

    @model_validator(mode="after")
    def _scene_invariants(self) -> "SceneRecord":
        width, height = self.image_size
        if self.target_index >= len(self.regions):
            raise ValueError(f"target_index {self.target_index} out of range for {len(self.regions)} regions")
        d_vision = len(self.regions[0].features)
        for i, region in enumerate(self.regions):
            if len(region.features) != d_vision:
                raise ValueError(f"regions.{i}.features has length {len(region.features)}, expected {d_vision}")
            if not _inside(region.box, width, height):
                raise ValueError(f"regions.{i}.box {list(region.box)} outside image {width}x{height}")
        if not _inside(self.gt_box, width, height):
            raise ValueError(f"gt_box {list(self.gt_box)} outside image {width}x{height}")
        return self

    @property
    def d_vision(self) -> int:
        return len(self.regions[0].features)

    @property
    def boxes(self) -> List[Box]:
        return [region.box for region in self.regions]

    @property
    def digest(self) -> str:
        return digest_object(self.model_dump(mode="json"))


def _inside(box: Box, width: float, height: float) -> bool:
    x1, y1, x2, y2 = box
    return 0 <= x1 and 0 <= y1 and x2 <= width and y2 <= height


class Dataset(BaseModel):
    version: int = 1
    provenance: dict[str, Any] = {}
    scenes: List[SceneRecord] = Field(..., min_length=1)
    split_labels: Optional[List[SplitLabel]] = None

    _digest: Optional[str] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _dataset_invariants(self) -> "Dataset":
        seen = set()
        for i, scene in enumerate(self.scenes):
            if scene.id in seen:
                raise ValueError(f"scenes.{i}.id '{scene.id}' is duplicated")
            seen.add(scene.id)
        if self.scenes:
            first = self.scenes[0]
            for i, scene in enumerate(self.scenes):
                if scene.d_vision != first.d_vision:
                    raise ValueError(f"scenes.{i}.regions features length {scene.d_vision}, dataset uses {first.d_vision}")
                if (scene.patch_grid.P, scene.patch_grid.width) != (first.patch_grid.P, first.patch_grid.width):
                    raise ValueError(f"scenes.{i}.patch_grid shape differs from scenes.0")
        if self.split_labels is not None and len(self.split_labels) != len(self.scenes):
            raise ValueError(f"split_labels has {len(self.split_labels)} entries for {len(self.scenes)} scenes")
        return self

    @property
    def digest(self) -> str:
        """Content digest of the scenes (split labels excluded)."""
        if self._digest is None:
            self._digest = digest_object(self.model_dump(mode="json", exclude={"split_labels"}))
        return self._digest

    def subset_digest(self, indices: List[int]) -> str:
        return digest_object([self.scenes[i].model_dump(mode="json") for i in indices])

    @property
    def d_vision(self) -> int:
        return self.scenes[0].d_vision

    @property
    def grid_size(self) -> int:
        return self.scenes[0].patch_grid.P

    @property
    def patch_width(self) -> int:
        return self.scenes[0].patch_grid.width

    @property
    def max_regions(self) -> int:
        return max(len(scene.regions) for scene in self.scenes)

    def indices(self, label: SplitLabel) -> List[int]:
        if self.split_labels is None:
            return list(range(len(self.scenes))) if label == SplitLabel.TRAIN else []
        return [i for i, assigned in enumerate(self.split_labels) if assigned == label]

    def find(self, scene_id: str) -> Optional[int]:
        for i, scene in enumerate(self.scenes):
            if scene.id == scene_id:
                return i
        return None


class Command(BaseModel):
    """A command as the model sees it: text, token ids and emotion."""
    raw_text: str
    tokens: List[int] = []
    pieces: List[str] = []
    truncated: bool = False
    emotion: Optional[EmotionCategory] = None

    @property
    def word_count(self) -> int:
        return len(self.raw_text.split())
