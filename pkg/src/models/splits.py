from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from .enums import Regime


class SplitSpec(BaseModel):
    num_domains: int = Field(default=3, ge=2)
    num_classes: int = Field(default=5, ge=2)
    total_per_domain: int = Field(default=200, ge=1, description="head-class count in a full-size domain")
    regime: Regime = Regime.TOTAL_HEAVY_TAIL
    tail_param: float = Field(default=1.0, description="decay rate, or the class-ratio cap for mildgini")
    domain_imbalance: float = Field(default=1.0, description="largest / smallest domain size (duality)")
    many_threshold: int = 100
    few_threshold: int = 20
    seed: int = Field(default=0, ge=0)

    @field_validator("tail_param")
    @classmethod
    def _tail_positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("tail_param must be positive")
        return value

    @field_validator("domain_imbalance")
    @classmethod
    def _imbalance_at_least_one(cls, value: float) -> float:
        if not value >= 1:
            raise ValueError("domain_imbalance must be at least 1")
        return value

    @model_validator(mode="after")
    def _check_thresholds(self):
        if not self.many_threshold > self.few_threshold >= 1:
            raise ValueError("thresholds must satisfy many_threshold > few_threshold >= 1")
        if self.regime == Regime.MILD_GINI and self.tail_param < 1:
            raise ValueError("mildgini uses tail_param as a class-ratio cap and needs tail_param >= 1")
        return self


class SplitPlan(BaseModel):
    counts: List[List[int]] = Field(description="domain x class sample counts")
    many_threshold: int = 100
    few_threshold: int = 20
    spec: Optional[SplitSpec] = None

    @field_validator("counts")
    @classmethod
    def _rectangular(cls, value: List[List[int]]) -> List[List[int]]:
        if not value or not value[0]:
            raise ValueError("counts must be a non-empty matrix")
        width = len(value[0])
        if any(len(row) != width for row in value):
            raise ValueError("counts rows differ in length")
        if any(c < 0 for row in value for c in row):
            raise ValueError("counts must be non-negative")
        return value

    @model_validator(mode="after")
    def _check_thresholds(self):
        if not self.many_threshold > self.few_threshold >= 1:
            raise ValueError("thresholds must satisfy many_threshold > few_threshold >= 1")
        return self

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def num_domains(self) -> int:
        return len(self.counts)

    @property
    def num_classes(self) -> int:
        return len(self.counts[0])

    @property
    def class_totals(self) -> np.ndarray:
        return self.matrix.sum(axis=0)


class ImbalanceStats(BaseModel):
    cr: float = Field(description="largest / smallest pooled class count")
    dr: float = Field(description="largest / smallest domain size")
    ecr: List[float] = Field(description="per-domain largest / smallest positive class count")
