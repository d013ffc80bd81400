from typing import Any, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .enums import Activation, LossVariant, MarginSurrogate, PrototypeDenominator, WorldKind
from .mining import MiningConfig


class TrainConfig(BaseModel):
    variant: LossVariant = LossVariant.INFONCE_ND
    alpha: float = Field(default=0.1, description="weight of the contrastive term")
    beta: float = Field(default=0.01, description="weight of the prototype alignment term")
    mining: MiningConfig = Field(default_factory=MiningConfig)
    batch_size: int = Field(default=32, description="samples drawn from every source domain")
    iterations: int = Field(default=500, description="maximum iteration T")
    learning_rate: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: List[int] = Field(default_factory=lambda: [32, 32])
    activation: Activation = Activation.TANH
    augment: bool = Field(default=True, description="mine hard negatives (off = NoAug ablation)")
    con_on_augmented_only: bool = False
    ce_weight_stop_gradient: bool = False
    ce_reweighting: bool = Field(default=True, description="class-wise re-weighted CE; off = plain mean CE (ERM)")
    prototype_denominator: PrototypeDenominator = PrototypeDenominator.ALL
    seed: int = Field(default=0, ge=0)

    @field_validator("alpha", "beta")
    @classmethod
    def _trade_off(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("invalid trade-off")
        return value

    @field_validator("batch_size")
    @classmethod
    def _batch(cls, value: int) -> int:
        if value < 2:
            raise ValueError("batch_size must be at least 2 per domain")
        return value

    @field_validator("iterations")
    @classmethod
    def _iterations(cls, value: int) -> int:
        if value < 1:
            raise ValueError("iterations must be at least 1")
        return value

    @field_validator("learning_rate")
    @classmethod
    def _lr(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("learning_rate must be positive")
        return value

    @field_validator("hidden")
    @classmethod
    def _hidden(cls, value: List[int]) -> List[int]:
        if any(width < 1 for width in value):
            raise ValueError("hidden layer widths must be positive")
        return value

    @property
    def uses_contrastive(self) -> bool:
        return self.variant != LossVariant.CE_ONLY and self.alpha > 0

    @property
    def uses_alignment(self) -> bool:
        return self.variant != LossVariant.CE_ONLY and self.beta > 0


class WorldConfig(BaseModel):
    kind: WorldKind = WorldKind.PRIOR_SHIFT
    num_classes: int = Field(default=2, ge=2)
    dim: int = Field(default=2, ge=1)
    radius: float = Field(default=2.0, gt=0, description="class means sit on a circle of this radius")
    domain_shift: float = Field(default=0.5, ge=0, description="norm of the per-domain mean offset")
    eval_total: Optional[int] = Field(default=None, description="held-out samples per domain; None = world totals")
    plan_path: Optional[str] = Field(default=None, description="split plan file for kind=plan")

    @model_validator(mode="after")
    def _plan_needs_path(self):
        if self.kind == WorldKind.PLAN and not self.plan_path:
            raise ValueError("world kind 'plan' needs plan_path")
        return self


class DiagnosticsConfig(BaseModel):
    delta: float = 0.0
    surrogate: MarginSurrogate = MarginSurrogate.IDENTITY
    pooled_posterior: bool = True
    num_projections: int = Field(default=128, ge=1)
    chunk_size: int = Field(default=256, ge=1, description="rows per evaluation shard")


class SyntheticWorld(BaseModel):
    """Class-conditional Gaussians per domain with a shared covariance."""

    name: str
    means: List[List[List[float]]] = Field(description="domain x class x dim")
    covariance: List[List[float]]
    priors: List[List[float]] = Field(description="domain x class, rows sum to 1")
    totals: List[int] = Field(description="samples per domain")
    target_domains: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        n_domains = len(self.means)
        if len(self.priors) != n_domains or len(self.totals) != n_domains:
            raise ValueError("means, priors and totals must cover the same domains")
        for row in self.priors:
            if any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-9:
                raise ValueError("class priors of every domain must sum to 1")
        dim = len(self.covariance)
        if any(len(mu) != dim for domain in self.means for mu in domain):
            raise ValueError("means and covariance disagree on dimension")
        if any(d < 0 or d >= n_domains for d in self.target_domains):
            raise ValueError("target domain out of range")
        if not self.source_domains:
            raise ValueError("a world needs at least one source domain")
        return self

    @property
    def num_domains(self) -> int:
        return len(self.means)

    @property
    def num_classes(self) -> int:
        return len(self.means[0])

    @property
    def dim(self) -> int:
        return len(self.covariance)

    @property
    def source_domains(self) -> List[int]:
        return [d for d in range(len(self.means)) if d not in self.target_domains]

    def mean_array(self) -> np.ndarray:
        return np.asarray(self.means, dtype=np.float64)


class LossLogRow(BaseModel):
    iteration: int
    ce: float
    con: float
    const: float
    total: float


class CheckpointFile(BaseModel):
    format_version: int = 1
    layer_sizes: List[int]
    activation: Activation
    weights: List[List[List[float]]]
    biases: List[List[float]]


class Dataset(BaseModel):
    """Labelled samples with their domain ids."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    x: np.ndarray
    y: np.ndarray
    d: np.ndarray

    @field_validator("x", mode="before")
    @classmethod
    def _coerce_x(cls, value):
        x = np.array(value, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("x must be a 2-D array")
        return x

    @field_validator("y", "d", mode="before")
    @classmethod
    def _coerce_ids(cls, value):
        return np.array(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check_lengths(self):
        if not self.x.shape[0] == self.y.shape[0] == self.d.shape[0]:
            raise ValueError("x, y and d differ in length")
        return self

    @property
    def size(self) -> int:
        return int(self.y.shape[0])

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(x=self.x[index], y=self.y[index], d=self.d[index])

    def in_domains(self, domains: List[int]) -> "Dataset":
        return self.subset(np.flatnonzero(np.isin(self.d, domains)))

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.y, minlength=num_classes)


class ForwardCache(BaseModel):
    """Activations of one forward pass, tied to the parameter version that produced them."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    version: int
    inputs: np.ndarray
    pre: List[np.ndarray] = Field(description="pre-activations of every hidden layer")
    post: List[np.ndarray] = Field(description="activations of every hidden layer")
    logits: np.ndarray
    probs: np.ndarray


class ObjectiveValue(BaseModel):
    """Components of the weighted objective on one batch, and its parameter gradient."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    ce: float
    con: float = 0.0
    const: float = 0.0
    total: float
    grads: Optional[List[np.ndarray]] = None
    num_augmented: int = 0


class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: Any
    log: List[LossLogRow]


class GradCheckResult(BaseModel):
    target: str
    trials: int
    max_rel_err: float
    tolerance: float
    failing_seeds: List[int] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failing_seeds
