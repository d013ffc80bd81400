from typing import Dict, Optional

from pydantic import BaseModel, Field

from .enums import ConfigSource
from .splits import SplitSpec
from .training import DiagnosticsConfig, TrainConfig, WorldConfig


class OutputConfig(BaseModel):
    out_dir: str = "runs/latest"
    checkpoint: str = "checkpoint.json"
    loss_log: str = "loss_log.csv"
    metrics: str = "metrics.csv"
    resolved_config: str = "resolved_config.json"
    eval_workers: int = Field(default=1, ge=1)


class RunConfig(BaseModel):
    """Fully resolved configuration of one command, with per-key provenance."""

    split: SplitSpec = Field(default_factory=SplitSpec)
    world: WorldConfig = Field(default_factory=WorldConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    diagnostics: DiagnosticsConfig = Field(default_factory=DiagnosticsConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    provenance: Dict[str, ConfigSource] = Field(default_factory=dict, description="'section.key' -> source")
    source_file: Optional[str] = None
