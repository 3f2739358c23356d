from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, Field

from app.schemas.scene import EmotionCategory, SubsetTag


class Prediction(BaseModel):
    scene_id: str
    command: str
    emotion: EmotionCategory
    k: int = Field(..., ge=1)
    credibility: List[float]
    ranked_regions: List[int]
    top_k: List[int]
    selected_box: List[float] = Field(..., min_length=4, max_length=4)
    checkpoint_digest: Optional[str] = None
    dataset_digest: Optional[str] = None
    scene_digest: Optional[str] = None


class RunMeta(BaseModel):
    checkpoint_digest: Optional[str] = None
    dataset_digest: Optional[str] = None
    wall_clock_seconds: float = 0.0


class MetricsReport(BaseModel):
    split: str
    subset_filter: Optional[SubsetTag] = None
    scene_count: int
    overall_ap50: Optional[float] = None
    mean_iou: Optional[float] = None
    per_subset_ap50: dict[SubsetTag, Optional[float]]
    counts: dict[SubsetTag, int]
    longest_k_ap50: dict[int, Optional[float]] = {}
    run_meta: RunMeta = RunMeta()

    def comparable(self) -> dict:
        """Report content without the wall-clock field."""
        return self.model_dump(mode="json", exclude={"run_meta": {"wall_clock_seconds"}})


class HeadMap(BaseModel):
    head: int
    probabilities: List[List[float]]


class LayerWeightRow(BaseModel):
    layer_index: int
    group: str
    mean_weight: Optional[float]


class AttentionDump(BaseModel):
    scene_id: str
    command: str
    emotion: EmotionCategory
    checkpoint_digest: Optional[str] = None
    dataset_digest: Optional[str] = None
    scene_digest: Optional[str] = None
    region_labels: List[str]
    layer_indices: List[int]
    query_labels: List[str]
    key_labels: List[str]
    rsd: List[List[float]]
    cross_modal: List[HeadMap]
    group_summary: dict[str, List[Optional[float]]]
    plot_table: List[LayerWeightRow]


class TrainLogHeader(BaseModel):
    event: Literal["header"] = "header"
    seed: int
    config: dict[str, str]
    config_digest: str
    dataset_digest: Optional[str]
    train_size: int
    val_size: int


class StepRecord(BaseModel):
    event: Literal["step"] = "step"
    step: int
    epoch: int
    loss: float
    lr: float
    grad_norm: float


class EpochRecord(BaseModel):
    event: Literal["epoch"] = "epoch"
    epoch: int
    step: int
    train_ap50: Optional[float]
    val_ap50: Optional[float]
    best: bool


TrainEvent = Annotated[Union[StepRecord, EpochRecord], Field(discriminator="event")]


class TrainLog(BaseModel):
    header: TrainLogHeader
    events: List[TrainEvent] = []

    @property
    def steps(self) -> List[StepRecord]:
        return [e for e in self.events if isinstance(e, StepRecord)]

    @property
    def epochs(self) -> List[EpochRecord]:
        return [e for e in self.events if isinstance(e, EpochRecord)]

    def lines(self) -> List[str]:
        return [self.header.model_dump_json()] + [event.model_dump_json() for event in self.events]


class ReducedDataRun(BaseModel):
    fraction: float
    train_size: int
    report: Optional[MetricsReport] = None
    error: Optional[str] = None


class ReducedDataReport(BaseModel):
    test_digest: str
    runs: List[ReducedDataRun]
