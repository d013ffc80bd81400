from .enums import (
    Activation,
    ClassGroup,
    ConfigSource,
    LossVariant,
    MarginSurrogate,
    PrototypeDenominator,
    Regime,
    WorldKind,
)
from .losses import ContrastiveBatch, LossValue, PrototypeSet
from .mining import AugmentedSample, MiningConfig
from .splits import ImbalanceStats, SplitPlan, SplitSpec
from .metrics import (
    GroupedAccuracy,
    MarginRecord,
    MetricsReport,
    PosteriorDiscrepancy,
    PriorDiscrepancy,
)
from .training import (
    CheckpointFile,
    Dataset,
    DiagnosticsConfig,
    ForwardCache,
    GradCheckResult,
    LossLogRow,
    ObjectiveValue,
    SyntheticWorld,
    TrainConfig,
    TrainResult,
    WorldConfig,
)
from .config import OutputConfig, RunConfig

__all__ = [
    "Activation",
    "AugmentedSample",
    "CheckpointFile",
    "Dataset",
    "ClassGroup",
    "ConfigSource",
    "ContrastiveBatch",
    "DiagnosticsConfig",
    "ForwardCache",
    "GradCheckResult",
    "GroupedAccuracy",
    "ImbalanceStats",
    "LossLogRow",
    "LossValue",
    "LossVariant",
    "MarginRecord",
    "MarginSurrogate",
    "MetricsReport",
    "MiningConfig",
    "ObjectiveValue",
    "OutputConfig",
    "PosteriorDiscrepancy",
    "PriorDiscrepancy",
    "PrototypeDenominator",
    "PrototypeSet",
    "Regime",
    "RunConfig",
    "SplitPlan",
    "SplitSpec",
    "SyntheticWorld",
    "TrainConfig",
    "TrainResult",
    "WorldConfig",
    "WorldKind",
]
