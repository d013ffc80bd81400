from enum import Enum


class Regime(str, Enum):
    MILD_GINI = "mildgini"
    TOTAL_HEAVY_TAIL = "totalheavytail"
    DUALITY = "duality"


class ClassGroup(str, Enum):
    MANY = "Many"
    MEDIUM = "Medium"
    FEW = "Few"


class LossVariant(str, Enum):
    INFONCE_ND = "infonce-nd"
    SUPCON_ND = "supcon-nd"
    INFONCE = "infonce"
    SUPCON = "supcon"
    CE_ONLY = "ce-only"


class MarginSurrogate(str, Enum):
    IDENTITY = "identity"
    HINGE = "hinge"
    SOFTPLUS = "softplus"


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"


class WorldKind(str, Enum):
    PRIOR_SHIFT = "prior-shift"
    MISALIGNMENT = "misalignment"
    ABSORPTION = "absorption"
    BALANCED = "balanced"
    PLAN = "plan"


class PrototypeDenominator(str, Enum):
    ALL = "all"
    CROSS_DOMAIN = "cross-domain"


class ConfigSource(str, Enum):
    DEFAULT = "default"
    FILE = "file"
    FLAG = "flag"
