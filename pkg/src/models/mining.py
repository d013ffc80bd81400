from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class MiningConfig(BaseModel):
    rho: float = Field(default=1.0, description="Beta(rho, rho) parameter for the mixing weight")
    budget_scale: float = Field(default=1.0, description="n_hat for the largest class")
    positive_fraction: float = Field(default=0.25, description="share of lowest-confidence in-class samples")
    max_per_class: Optional[int] = Field(default=None, description="optional cap on mixes per class and step")
    fixed_lambda: Optional[float] = Field(default=None, description="bypass Beta sampling with a constant")
    seed: int = 0

    @field_validator("rho")
    @classmethod
    def _positive_rho(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("rho must be positive")
        return value

    @field_validator("budget_scale")
    @classmethod
    def _positive_scale(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("budget_scale must be positive")
        return value

    @field_validator("positive_fraction")
    @classmethod
    def _fraction(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError("positive_fraction must lie in (0, 1]")
        return value

    @field_validator("max_per_class")
    @classmethod
    def _cap(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("max_per_class must be at least 1")
        return value

    @field_validator("fixed_lambda")
    @classmethod
    def _lambda_range(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not 0.0 <= value <= 1.0:
            raise ValueError("fixed_lambda must lie in [0, 1]")
        return value


class AugmentedSample(BaseModel):
    """x = lam * x[source_pos] + (1 - lam) * x[source_neg], labelled with the negative's class."""

    model_config = ConfigDict(populate_by_name=True)

    x: List[float]
    anchor_class: int
    source_pos: int
    source_neg: int
    lam: float = Field(alias="lambda", ge=0.0, le=1.0)
    assigned_label: int
