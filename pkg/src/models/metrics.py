from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from .enums import ClassGroup, MarginSurrogate


def _num(value: float) -> str:
    # repr of a builtin float round-trips exactly
    return repr(float(value))


class MarginRecord(BaseModel):
    sample_id: int
    gamma: float = Field(description="surrogate of h_y(x) - max_{k != y} h_k(x)")
    label: int
    domain: Optional[int] = None


class PosteriorDiscrepancy(BaseModel):
    per_class: Dict[int, float]
    mean: float
    pooled: bool = True


class PriorDiscrepancy(BaseModel):
    source_source: Optional[float] = Field(default=None, description="mean pairwise distance among sources")
    source_target: float = Field(description="mean source-to-target distance")


class GroupedAccuracy(BaseModel):
    overall: float
    per_group: Dict[ClassGroup, float] = Field(default_factory=dict, description="absent groups are omitted")
    per_class: Dict[int, float] = Field(default_factory=dict)


class MetricsReport(BaseModel):
    """One evaluation run; flattens to (name, qualifier, value) rows."""

    num_samples: int
    delta: float = 0.0
    surrogate: MarginSurrogate = MarginSurrogate.IDENTITY
    avg_gamma: float = Field(description="mean of the raw margin h_y(x) - max_{k != y} h_k(x)")
    small_margin_prob: float = Field(ge=0.0, le=1.0, description="share of raw margins at or below delta")
    avg_surrogate: Optional[float] = Field(default=None, description="mean surrogate margin; unset for identity")
    posterior_discrepancy: float
    posterior_discrepancy_per_class: Dict[int, float] = Field(default_factory=dict)
    prior_discrepancy_ss: Optional[float] = None
    prior_discrepancy_st: Optional[float] = None
    accuracy: float = Field(ge=0.0, le=1.0)
    group_accuracy: Dict[ClassGroup, float] = Field(default_factory=dict)
    class_accuracy: Dict[int, float] = Field(default_factory=dict)
    class_margin: Dict[int, float] = Field(default_factory=dict)

    def to_rows(self) -> List[Tuple[str, str, str]]:
        rows = [
            ("num_samples", "", str(self.num_samples)),
            ("delta", "", _num(self.delta)),
            ("surrogate", "", self.surrogate.value),
            ("accuracy", "", _num(self.accuracy)),
            ("avg_gamma", "", _num(self.avg_gamma)),
            ("small_margin_prob", "", _num(self.small_margin_prob)),
            ("posterior_discrepancy", "", _num(self.posterior_discrepancy)),
        ]
        if self.avg_surrogate is not None:
            rows.append(("avg_surrogate", self.surrogate.value, _num(self.avg_surrogate)))
        if self.prior_discrepancy_ss is not None:
            rows.append(("prior_discrepancy", "SS", _num(self.prior_discrepancy_ss)))
        if self.prior_discrepancy_st is not None:
            rows.append(("prior_discrepancy", "ST", _num(self.prior_discrepancy_st)))
        for group in ClassGroup:
            if group in self.group_accuracy:
                rows.append(("group_accuracy", group.value, _num(self.group_accuracy[group])))
        for cls, value in sorted(self.posterior_discrepancy_per_class.items()):
            rows.append(("posterior_discrepancy", f"class={cls}", _num(value)))
        for cls, value in sorted(self.class_accuracy.items()):
            rows.append(("class_accuracy", f"class={cls}", _num(value)))
        for cls, value in sorted(self.class_margin.items()):
            rows.append(("class_margin", f"class={cls}", _num(value)))
        return rows

    @classmethod
    def from_rows(cls, rows: List[Tuple[str, str, str]]) -> "MetricsReport":
        fields: Dict[str, object] = {
            "posterior_discrepancy_per_class": {},
            "group_accuracy": {},
            "class_accuracy": {},
            "class_margin": {},
        }
        per_class_keys = {
            "posterior_discrepancy": "posterior_discrepancy_per_class",
            "class_accuracy": "class_accuracy",
            "class_margin": "class_margin",
        }
        for name, qualifier, value in rows:
            if qualifier.startswith("class="):
                fields[per_class_keys[name]][int(qualifier[len("class="):])] = float(value)
            elif name == "prior_discrepancy":
                key = "prior_discrepancy_ss" if qualifier == "SS" else "prior_discrepancy_st"
                fields[key] = float(value)
            elif name == "group_accuracy":
                fields["group_accuracy"][ClassGroup(qualifier)] = float(value)
            elif name == "num_samples":
                fields[name] = int(value)
            elif name == "surrogate":
                fields[name] = MarginSurrogate(value)
            else:
                fields[name] = float(value)
        return cls(**fields)

    def summary_line(self) -> str:
        parts = [f"acc={self.accuracy:.4f}"]
        for group in ClassGroup:
            if group in self.group_accuracy:
                parts.append(f"{group.value.lower()}={self.group_accuracy[group]:.4f}")
        parts.append(f"avg_gamma={self.avg_gamma:.4f}")
        parts.append(f"pr_gamma_le_{self.delta:g}={self.small_margin_prob:.4f}")
        if self.avg_surrogate is not None:
            parts.append(f"avg_{self.surrogate.value}={self.avg_surrogate:.4f}")
        parts.append(f"pd={self.posterior_discrepancy:.4f}")
        if self.prior_discrepancy_ss is not None:
            parts.append(f"ss={self.prior_discrepancy_ss:.4f}")
        if self.prior_discrepancy_st is not None:
            parts.append(f"st={self.prior_discrepancy_st:.4f}")
        return " ".join(parts)
