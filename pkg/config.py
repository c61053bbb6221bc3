"""
Run configuration: TOML config files, flag overrides and config hashing.

Precedence is command-line flags > config file > model defaults. The file may
contain the tables [scenario], [sensor], [tracker], [graph], [merge], [model],
[train] and [channel], plus a top-level ``jobs`` key.
"""

import hashlib
import json
import logging
import tomllib
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from errors import ConfigurationError
from models import ChannelConfig, ScenarioConfig, TrainConfig

logger = logging.getLogger(__name__)

SCENARIO_TABLES = ("sensor", "tracker")
TRAIN_TABLES = ("graph", "merge", "model", "channel")
KNOWN_TABLES = ("scenario", "train", *SCENARIO_TABLES, *TRAIN_TABLES)

Overrides = dict[str, dict[str, Any]]


class RunConfig(BaseModel):
    """Everything one CLI invocation is configured with."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    jobs: int = Field(1, ge=1, description="Worker processes")


def config_hash(*models: BaseModel) -> str:
    """First 16 hex chars of SHA-256 over the canonical JSON of ``models``."""
    canonical = json.dumps(
        [m.model_dump(mode="json") for m in models],
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def read_config_file(path: Path) -> dict[str, Any]:
    try:
        with path.open("rb") as f:
            document = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"Config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Invalid TOML in {path}: {e}") from e

    unknown = set(document) - {*KNOWN_TABLES, "jobs"}
    if unknown:
        raise ConfigurationError(
            f"Unknown config keys in {path}: {', '.join(sorted(unknown))}"
        )
    for table in KNOWN_TABLES:
        if table in document and not isinstance(document[table], dict):
            raise ConfigurationError(f"[{table}] in {path} must be a table")
    return document


def _layer(base: dict[str, Any], update: dict[str, Any] | None) -> dict[str, Any]:
    return {**base, **(update or {})}


def _channel(settings: dict[str, Any]) -> dict[str, Any]:
    """Expand a channel name into its preset, keeping explicit keys."""
    if "name" not in settings:
        return settings
    preset = ChannelConfig.preset(settings["name"]).model_dump()
    return {**preset, **settings}


def load_config(
    path: Path | None = None, overrides: Overrides | None = None
) -> RunConfig:
    """Build the run configuration from defaults, an optional file and flags.

    ``overrides`` uses the same table names as the file; only keys whose flag
    was given should be present.
    """
    document = read_config_file(path) if path is not None else {}
    overrides = overrides or {}

    def table(name: str) -> dict[str, Any]:
        return _layer(document.get(name, {}), overrides.get(name))

    try:
        scenario = table("scenario")
        for name in SCENARIO_TABLES:
            if name in document or name in overrides:
                scenario[name] = table(name)
        train = table("train")
        for name in TRAIN_TABLES:
            if name in document or name in overrides:
                value = table(name)
                train[name] = _channel(value) if name == "channel" else value
        jobs = overrides.get("run", {}).get("jobs", document.get("jobs", 1))
        config = RunConfig(scenario=scenario, train=train, jobs=jobs)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e
    except ValueError as e:
        raise ConfigurationError(str(e)) from e

    if path is not None:
        logger.info(f"Loaded configuration from {path} ({config_hash(config)})")
    return config
