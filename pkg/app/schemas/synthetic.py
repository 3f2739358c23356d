from typing import List

from pydantic import BaseModel, ConfigDict, Field

from app.schemas.run_config import ModelConfig


class GeneratorParams(BaseModel):
    """Knobs of the planted-correspondence scene generator."""
    model_config = ConfigDict(extra="forbid")

    n_regions: int = Field(8, ge=1)
    grid_size: int = Field(4, ge=1)
    patch_size: int = Field(16, ge=1)
    patch_width: int = Field(16, ge=1)
    d_vision: int = Field(64, ge=1)
    colors: List[str] = ["red", "blue", "white", "black"]
    kinds: List[str] = ["car", "truck", "bus", "bike", "cone", "sign"]
    zones: List[str] = ["left", "middle", "right"]
    agent_kinds: List[str] = ["car", "truck", "bus", "bike", "pedestrian"]
    noise: float = Field(0.05, ge=0)
    overlap_rate: float = Field(0.0, ge=0, le=1)
    ambiguity_rate: float = Field(0.2, ge=0, le=1)
    low_light_rate: float = Field(0.2, ge=0, le=1)
    long_text_rate: float = Field(0.1, ge=0, le=1)
    emotion_templates: bool = False

    @classmethod
    def for_model(cls, model: ModelConfig, **updates) -> "GeneratorParams":
        """Scene geometry sized to a model's inputs."""
        return cls(n_regions=model.n_regions, grid_size=model.grid_size, patch_size=model.patch_size,
                   patch_width=model.patch_width, d_vision=model.d_vision, **updates)
