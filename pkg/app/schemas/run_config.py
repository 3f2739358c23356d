from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.errors import ConfigurationError


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: int = Field(64, ge=1)
    d_vision: int = Field(64, ge=1)
    patch_width: int = Field(16, ge=1)
    grid_size: int = Field(4, ge=1)
    patch_size: int = Field(16, ge=1)
    n_regions: int = Field(8, ge=1)
    vision_width: int = Field(64, ge=1)
    max_tokens: int = Field(60, ge=1)
    text_layers: int = Field(2, ge=0)
    text_heads: int = Field(4, ge=1)
    context_layers: int = Field(2, ge=0)
    context_heads: int = Field(4, ge=1)
    cross_heads: int = Field(4, ge=1)
    cross_width: int = Field(64, ge=1)
    fusion_heads: int = Field(4, ge=1)
    decoder_layers: int = Field(3, ge=1)
    decoder_heads: int = Field(4, ge=1)
    ff_dim: int = Field(128, ge=1)
    ln_eps: float = Field(1e-12, gt=0)
    dropout: float = Field(0.0, ge=0, lt=1)
    use_emotion: bool = True
    use_context: bool = True
    use_fusion: bool = True
    use_rsd: bool = True
    qk_swap: bool = False

    @model_validator(mode="after")
    def _heads_divide_widths(self) -> "ModelConfig":
        for heads, width in (("text_heads", "d"), ("context_heads", "vision_width"), ("cross_heads", "cross_width"),
                             ("fusion_heads", "d"), ("decoder_heads", "d")):
            if getattr(self, width) % getattr(self, heads):
                raise ConfigurationError(f"{getattr(self, heads)} heads do not divide model.{width}={getattr(self, width)}",
                                         field=f"model.{heads}")
        if self.context_heads and self.d % self.context_heads:
            raise ConfigurationError(f"{self.context_heads} heads do not divide model.d={self.d} in the fusion block",
                                     field="model.context_heads")
        return self


class OptimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    t_0: Optional[int] = Field(None, ge=1)
    t_mult: int = Field(2, ge=1)
    lr_min: float = Field(0.0, ge=0)
    grad_clip: float = Field(5.0, ge=0)

    @model_validator(mode="after")
    def _lr_bounds(self) -> "OptimConfig":
        if self.lr_min > self.lr:
            raise ConfigurationError(f"lr_min {self.lr_min} exceeds lr {self.lr}", field="optim.lr_min")
        return self


class TrainConfig(BaseModel):
    """Everything a run depends on. Serialized as flat dotted keys (`model.d=64`)."""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0)
    epochs: int = Field(120, ge=0)
    batch_size: int = Field(8, ge=1)
    eval_batch_size: int = Field(64, ge=1)
    fraction: float = Field(1.0, gt=0, le=1)
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    emotion_mode: Literal["rule", "external"] = "rule"
    freeze_emotion: bool = False
    model: ModelConfig = ModelConfig()
    optim: OptimConfig = OptimConfig()

    @model_validator(mode="after")
    def _split_fractions(self) -> "TrainConfig":
        train, val, test = self.split
        if train <= 0 or val < 0 or test < 0:
            raise ConfigurationError(f"split fractions must be train > 0, val/test >= 0, got {self.split}", field="split")
        if train + val + test > 1.0 + 1e-9:
            raise ConfigurationError(f"split fractions sum to {train + val + test} > 1", field="split")
        return self


PRESETS: dict[str, dict[str, str]] = {
    "desk": {},
    "small": {
        "model.cross_heads": "4",
        "model.cross_width": "256",
        "model.decoder_layers": "4",
    },
    "full": {
        "model.d": "768",
        "model.d_vision": "1024",
        "model.n_regions": "36",
        "model.max_tokens": "60",
        "model.text_layers": "16",
        "model.text_heads": "12",
        "model.context_layers": "12",
        "model.context_heads": "12",
        "model.vision_width": "768",
        "model.patch_size": "16",
        "model.cross_heads": "16",
        "model.cross_width": "1024",
        "model.fusion_heads": "16",
        "model.decoder_layers": "12",
        "model.decoder_heads": "12",
        "model.ff_dim": "3072",
        "batch_size": "16",
        "optim.lr": "0.0001",
        "epochs": "6",
    },
}
