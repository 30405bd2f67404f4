from enum import Enum
from typing import Optional, Tuple
from pydantic import BaseModel, Field, field_validator, model_validator
from app.config import settings


class MotionMode(str, Enum):
    CSTM_ONLY = "cstm_only"
    STM = "stm"
    MCB = "mcb"

    @classmethod
    def parse(cls, value: str) -> "MotionMode":
        aliases = {"cstm": cls.CSTM_ONLY}
        if value in aliases:
            return aliases[value]
        return cls(value)


class ModelConfig(BaseModel):
    stages: int = Field(2, ge=1)
    base_width: int = Field(16, ge=1)
    width_multiplier: int = Field(2, ge=1)
    in_channels: int = Field(3, ge=1)
    mode: MotionMode = MotionMode.MCB
    ad_enabled: bool = True
    ad_tap_stage: Optional[int] = None
    ad_units: int = Field(settings.AD_UNITS, ge=1)
    reduction_ratio: int = Field(settings.REDUCTION_RATIO, ge=1)
    seed: int = Field(0, ge=0)

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(self.base_width * self.width_multiplier ** i for i in range(self.stages))

    @property
    def tap_stage(self) -> int:
        return self.stages - 1 if self.ad_tap_stage is None else self.ad_tap_stage

    @model_validator(mode='after')
    def check_widths(self):
        for width in self.widths:
            if width >= self.reduction_ratio and width % self.reduction_ratio:
                raise ValueError(
                    f"stage width {width} is not divisible by reduction ratio {self.reduction_ratio}")
        if self.ad_tap_stage is not None and not 0 <= self.ad_tap_stage < self.stages:
            raise ValueError(f"ad_tap_stage must lie in [0, {self.stages}), got {self.ad_tap_stage}")
        return self


class TrainConfig(BaseModel):
    # 0 is accepted so a run can be replayed with frozen parameters
    lr: float = Field(0.001, ge=0)
    weight_decay: float = Field(1e-6, ge=0)
    momentum: float = Field(0.0, ge=0, lt=1)
    batch_size: int = Field(16, ge=1)
    steps: int = Field(100, ge=0)
    seed: int = Field(0, ge=0)
    mode: MotionMode = MotionMode.MCB
    ad_enabled: bool = True
    use_l1_loss: bool = True
    use_ad_cls_loss: bool = True
    log_every: int = Field(settings.LOG_EVERY, ge=1)
    # global gradient-norm ceiling; None trains unclipped
    grad_clip: Optional[float] = Field(settings.GRAD_CLIP_NORM, gt=0)


class GenParams(BaseModel):
    channels: int = Field(3, ge=1)
    frames: int = Field(8, ge=3)
    height: int = Field(32, ge=4)
    width: int = Field(32, ge=4)
    blob_count: int = Field(3, ge=0)
    velocity_range: Tuple[float, float] = (0.5, 1.5)
    sigma_range: Tuple[float, float] = (2.0, 4.0)
    jitter_amp: float = Field(1.5, ge=0)
    region_fraction: float = Field(0.25, gt=0, le=1)
    texture_amp: float = Field(0.3, ge=0)
    texture_cells: int = Field(8, ge=1)

    @field_validator('velocity_range', 'sigma_range')
    @classmethod
    def check_range(cls, v):
        low, high = v
        if low < 0 or high < low:
            raise ValueError(f"range must satisfy 0 <= low <= high, got {v}")
        return v

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return (self.channels, self.frames, self.height, self.width)
