"""
Configuration Management for the capture engine.
Provides environment-backed settings, logging setup and run-config file handling.
"""

import os
import json
import logging
import logging.handlers
from typing import Any, Dict, Optional, Type, TypeVar
from dataclasses import dataclass, field, asdict
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from core.errors import ConfigError

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

ConfigModel = TypeVar("ConfigModel", bound=BaseModel)

RESOLVED_CONFIG_NAME = "resolved_config.json"
ENGINE_SNAPSHOT_KEY = "_engine"


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() in ("true", "1", "yes")


@dataclass
class LoggingConfig:
    """Logging configuration settings."""
    level: str = field(default_factory=lambda: os.getenv("LOG_LEVEL", "INFO"))
    format: str = field(default_factory=lambda: os.getenv("LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    file_enabled: bool = field(default_factory=lambda: _env_bool("LOG_FILE_ENABLED", "false"))
    file_path: str = field(default_factory=lambda: os.getenv("LOG_FILE_PATH", "logs/ampzoo.log"))
    max_file_size: int = field(default_factory=lambda: int(os.getenv("LOG_MAX_FILE_SIZE", "10485760")))  # 10MB
    backup_count: int = field(default_factory=lambda: int(os.getenv("LOG_BACKUP_COUNT", "5")))


@dataclass
class RenderConfig:
    """Online rendering settings."""
    workers: int = field(default_factory=lambda: int(os.getenv("RENDER_WORKERS", "1")))
    prefetch: int = field(default_factory=lambda: int(os.getenv("RENDER_PREFETCH", "4")))
    sample_rate: int = field(default_factory=lambda: int(os.getenv("SAMPLE_RATE", "44100")))
    cond_points: int = field(default_factory=lambda: int(os.getenv("COND_POINTS", "5")))
    clip_seconds: float = field(default_factory=lambda: float(os.getenv("CLIP_SECONDS", "2.0")))


@dataclass
class TrainDefaults:
    """Optimizer and schedule defaults shared by the training procedures."""
    adam_lr: float = field(default_factory=lambda: float(os.getenv("ADAM_LR", "1e-3")))
    enroll_lr: float = field(default_factory=lambda: float(os.getenv("ENROLL_LR", "1e-2")))
    grad_clip_norm: float = field(default_factory=lambda: float(os.getenv("GRAD_CLIP_NORM", "10.0")))
    val_every: int = field(default_factory=lambda: int(os.getenv("VAL_EVERY", "50")))
    early_stop_patience: int = field(default_factory=lambda: int(os.getenv("EARLY_STOP_PATIENCE", "10")))


@dataclass
class EngineConfig:
    """Main engine configuration."""
    environment: str = field(default_factory=lambda: os.getenv("ENVIRONMENT", "development"))

    # Sub-configurations
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    train: TrainDefaults = field(default_factory=TrainDefaults)


_config = EngineConfig()


def get_config() -> EngineConfig:
    """Get the current engine configuration."""
    return _config


def reload_config() -> EngineConfig:
    """Re-read the environment into a fresh configuration."""
    global _config
    _config = EngineConfig()
    return _config


def validate_config(config: Optional[EngineConfig] = None) -> bool:
    """Validate the engine configuration, logging every problem found."""
    config = config or get_config()
    errors = []

    if config.render.workers <= 0:
        errors.append("Render workers must be positive")
    if config.render.prefetch <= 0:
        errors.append("Render prefetch must be positive")
    if config.render.sample_rate <= 0:
        errors.append("Sample rate must be positive")
    if config.render.cond_points < 1:
        errors.append("Conditioning points must be at least 1")
    if config.train.adam_lr <= 0 or config.train.enroll_lr <= 0:
        errors.append("Learning rates must be positive")
    if not isinstance(logging.getLevelName(config.logging.level.upper()), int):
        errors.append(f"Unknown log level {config.logging.level}")

    if errors:
        for error in errors:
            logger.error(f"Configuration validation error: {error}")
        return False
    return True


def configure_logging(config: Optional[LoggingConfig] = None) -> None:
    """Install the root handlers; called once by the command-line entry point."""
    config = config or get_config().logging
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)

    formatter = logging.Formatter(config.format)
    stream = logging.StreamHandler()
    stream.setFormatter(formatter)
    root.addHandler(stream)

    if config.file_enabled:
        Path(config.file_path).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            config.file_path,
            maxBytes=config.max_file_size,
            backupCount=config.backup_count,
        )
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    root.setLevel(config.level.upper())


def load_run_config(path: str, model: Type[ConfigModel]) -> ConfigModel:
    """Load a JSON run configuration; unknown keys are rejected by the model."""
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e

    if isinstance(data, dict):
        data.pop(ENGINE_SNAPSHOT_KEY, None)

    try:
        config = model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}") from e

    logger.info(f"Loaded configuration from {path}")
    return config


def save_resolved_config(config: BaseModel, run_dir: str, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write the fully resolved configuration next to a run's outputs."""
    out_dir = Path(run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = config.model_dump(mode="json")
    if extra:
        payload[ENGINE_SNAPSHOT_KEY] = extra
    path = out_dir / RESOLVED_CONFIG_NAME
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved resolved configuration to {path}")
    return path


def engine_snapshot() -> Dict[str, Any]:
    """Environment-derived settings recorded alongside a resolved config."""
    return asdict(get_config())
