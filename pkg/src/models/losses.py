from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ContrastiveBatch(BaseModel):
    """
    Prediction vectors and their class labels.

    Rows are treated as free vectors so that finite differences may step off
    the simplex; anchors, positives and negatives are derived from the labels.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    preds: np.ndarray = Field(description="n x K prediction vectors")
    labels: np.ndarray = Field(description="n class ids")

    @field_validator("preds", mode="before")
    @classmethod
    def _coerce_preds(cls, value):
        preds = np.array(value, dtype=np.float64)
        if preds.ndim != 2:
            raise ValueError("preds must be a 2-D array")
        return preds

    @field_validator("labels", mode="before")
    @classmethod
    def _coerce_labels(cls, value):
        labels = np.array(value, dtype=np.int64).reshape(-1)
        if np.any(labels < 0):
            raise ValueError("labels must be non-negative class ids")
        return labels

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.preds.shape[0] != self.labels.shape[0]:
            raise ValueError("preds and labels differ in length")
        if self.preds.shape[0] < 2:
            raise ValueError("a contrastive batch needs at least 2 entries")
        return self

    @property
    def size(self) -> int:
        return int(self.preds.shape[0])

    def with_preds(self, preds: np.ndarray) -> "ContrastiveBatch":
        return ContrastiveBatch(preds=preds, labels=self.labels)

    def permuted(self, order: np.ndarray) -> "ContrastiveBatch":
        return ContrastiveBatch(preds=self.preds[order], labels=self.labels[order])


class PrototypeSet(BaseModel):
    """Mean prediction per (class, domain) cell present in a batch."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    classes: np.ndarray
    domains: np.ndarray
    protos: np.ndarray = Field(description="m x K mean prediction vectors")
    members: List[np.ndarray] = Field(default_factory=list, description="batch rows behind each prototype")
    num_samples: int = 0

    @field_validator("protos", mode="before")
    @classmethod
    def _coerce_protos(cls, value):
        protos = np.array(value, dtype=np.float64)
        if protos.ndim != 2:
            raise ValueError("protos must be a 2-D array")
        return protos

    @field_validator("classes", "domains", mode="before")
    @classmethod
    def _coerce_ids(cls, value):
        return np.array(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check_shapes(self):
        m = self.protos.shape[0]
        if self.classes.shape[0] != m or self.domains.shape[0] != m:
            raise ValueError("classes, domains and protos differ in length")
        if self.members and len(self.members) != m:
            raise ValueError("members must list one index array per prototype")
        return self

    @property
    def size(self) -> int:
        return int(self.protos.shape[0])

    def with_protos(self, protos: np.ndarray) -> "PrototypeSet":
        return PrototypeSet(
            classes=self.classes,
            domains=self.domains,
            protos=protos,
            members=self.members,
            num_samples=self.num_samples,
        )

    def scatter(self, grad_protos: np.ndarray) -> np.ndarray:
        """Chain rule through the mean: each member receives grad / cell size."""
        if not self.members:
            raise ValueError("prototype set carries no membership")
        grads = np.zeros((self.num_samples, self.protos.shape[1]), dtype=np.float64)
        for row, members in enumerate(self.members):
            grads[members] += grad_protos[row] / len(members)
        return grads


class LossValue(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    value: float
    grads: Optional[np.ndarray] = None
    per_anchor: Optional[np.ndarray] = Field(default=None, description="per-anchor (or per-class) terms")

    @field_validator("value")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("loss value is not finite")
        return float(value)

    @classmethod
    def zero(cls, shape=None) -> "LossValue":
        grads = None if shape is None else np.zeros(shape, dtype=np.float64)
        return cls(value=0.0, grads=grads)
