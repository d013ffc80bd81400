"""
Run configuration: INI file sections merged under command-line flags.

Sections and keys mirror the pydantic models:

    [split]        SplitSpec
    [world]        WorldConfig
    [train]        TrainConfig (without the nested mining block)
    [mining]       MiningConfig
    [diagnostics]  DiagnosticsConfig
    [output]       OutputConfig

A value of `none` clears an optional key; `hidden` takes a comma-separated
list of widths.
"""

import configparser
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Type, Union

from pydantic import BaseModel

from ..models import (
    ConfigSource,
    DiagnosticsConfig,
    MiningConfig,
    OutputConfig,
    RunConfig,
    SplitSpec,
    TrainConfig,
    WorldConfig,
)
from .errors import InvalidParameterError

logger = logging.getLogger(__name__)

SECTION_MODELS: Dict[str, Type[BaseModel]] = {
    "split": SplitSpec,
    "world": WorldConfig,
    "train": TrainConfig,
    "mining": MiningConfig,
    "diagnostics": DiagnosticsConfig,
    "output": OutputConfig,
}
_NESTED = {("train", "mining")}
_LIST_KEYS = {("train", "hidden")}

Overrides = Dict[str, Dict[str, Any]]


def section_keys(section: str):
    return [key for key in SECTION_MODELS[section].model_fields if (section, key) not in _NESTED]


def _parse_value(section: str, key: str, raw: str) -> Any:
    text = raw.strip()
    if text.lower() in ("none", ""):
        return None
    if (section, key) in _LIST_KEYS:
        try:
            return [int(part) for part in text.split(",") if part.strip()]
        except ValueError:
            raise InvalidParameterError(f"[{section}] {key} must be a comma-separated list of integers")
    return text


def read_config_file(path: Union[str, Path]) -> Overrides:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(path, encoding="utf-8")

    values: Overrides = {}
    for section in parser.sections():
        if section not in SECTION_MODELS:
            raise InvalidParameterError(f"unknown config section [{section}]")
        known = set(section_keys(section))
        for key, raw in parser.items(section):
            if key not in known:
                raise InvalidParameterError(f"unknown key '{key}' in section [{section}]")
            values.setdefault(section, {})[key] = _parse_value(section, key, raw)
    logger.debug("read %d config sections from %s", len(values), path)
    return values


def resolve_config(
    path: Optional[Union[str, Path]] = None,
    flags: Optional[Overrides] = None,
    defaults: Optional[Overrides] = None,
) -> RunConfig:
    """
    Merge flags over file values over defaults, recording where every key
    came from. `defaults` replaces built-in defaults (environment settings)
    and still counts as a default.
    """
    flags = flags or {}
    defaults = defaults or {}
    file_values = read_config_file(path) if path else {}

    provenance: Dict[str, ConfigSource] = {}
    merged: Dict[str, Dict[str, Any]] = {}
    for section in SECTION_MODELS:
        merged[section] = {}
        for key in section_keys(section):
            name = f"{section}.{key}"
            if flags.get(section, {}).get(key) is not None:
                merged[section][key] = flags[section][key]
                provenance[name] = ConfigSource.FLAG
            elif key in file_values.get(section, {}):
                merged[section][key] = file_values[section][key]
                provenance[name] = ConfigSource.FILE
            else:
                if defaults.get(section, {}).get(key) is not None:
                    merged[section][key] = defaults[section][key]
                provenance[name] = ConfigSource.DEFAULT

    mining = MiningConfig(**merged["mining"])
    return RunConfig(
        split=SplitSpec(**merged["split"]),
        world=WorldConfig(**merged["world"]),
        train=TrainConfig(**merged["train"], mining=mining),
        diagnostics=DiagnosticsConfig(**merged["diagnostics"]),
        output=OutputConfig(**merged["output"]),
        provenance=provenance,
        source_file=str(path) if path else None,
    )


def write_resolved_config(config: RunConfig, out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / config.output.resolved_config
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("wrote resolved config to %s", path)
    return path


def load_resolved_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"resolved config not found: {path}")
    return RunConfig.model_validate_json(path.read_text(encoding="utf-8"))
