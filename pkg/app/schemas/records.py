from enum import IntEnum
from typing import List
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
import math


# seeds are unsigned 64-bit
SEED_MAX = 2 ** 64 - 1


class Label(IntEnum):
    REAL = 0
    FAKE = 1


class ManifestRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: str
    label: Label
    seed: int = Field(ge=0, le=SEED_MAX)


class Manifest(BaseModel):
    records: List[ManifestRecord] = []

    @field_validator('records')
    @classmethod
    def unique_paths(cls, v):
        paths = [r.path for r in v]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        return v

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> List[int]:
        return [int(r.label) for r in self.records]


class ScoredSet(BaseModel):
    scores: List[float]
    labels: List[int]

    @field_validator('scores')
    @classmethod
    def scores_in_unit_range(cls, v):
        for s in v:
            if not math.isfinite(s) or s < 0 or s > 1:
                raise ValueError(f"scores must lie in [0, 1], got {s}")
        return v

    @field_validator('labels')
    @classmethod
    def binary_labels(cls, v):
        if any(label not in (0, 1) for label in v):
            raise ValueError("labels must be 0 (real) or 1 (fake)")
        return v

    @model_validator(mode='after')
    def aligned(self):
        if not self.scores:
            raise ValueError("scored set is empty")
        if len(self.scores) != len(self.labels):
            raise ValueError(f"{len(self.scores)} scores but {len(self.labels)} labels")
        return self
