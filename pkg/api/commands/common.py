"""
Helpers shared by the command modules: run-config loading, registry and corpus
construction, and run-directory bookkeeping.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from core.config import engine_snapshot, load_run_config, save_resolved_config
from core.errors import ConfigError
from models.device import DeviceRegistry
from models.schemas import RunConfig
from services.model_zoo import build_registry
from services.signal_io import Corpus

logger = logging.getLogger(__name__)


def add_config_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--workers", type=int, default=None, help="Override render worker count")


def load_config(args: argparse.Namespace) -> RunConfig:
    """Load the run config named by --config, applying --workers."""
    config = load_run_config(args.config, RunConfig)
    workers = getattr(args, "workers", None)
    if workers is not None:
        if workers < 1:
            raise ConfigError(f"--workers must be positive, got {workers}")
        config = config.model_copy(update={"train": config.train.model_copy(update={"workers": workers})})
        if config.augment is not None:
            config = config.model_copy(update={"augment": config.augment.model_copy(update={"workers": workers})})
    return config


def require(value: Optional[str], key: str) -> str:
    if not value:
        raise ConfigError(f"Run config needs '{key}' for this command")
    return value


def load_registry(config: RunConfig) -> DeviceRegistry:
    return build_registry(require(config.models_dir, "models_dir"), config.cond_points)


def load_corpus(config: RunConfig) -> Corpus:
    return Corpus.from_directory(require(config.corpus_dir, "corpus_dir"), config.sample_rate)


def load_inputs(config: RunConfig) -> Tuple[DeviceRegistry, Corpus]:
    return load_registry(config), load_corpus(config)


def start_run(config: RunConfig, command: str, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Create the run directory and write resolved_config.json into it."""
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {"command": command, "engine": engine_snapshot()}
    snapshot.update(extra or {})
    save_resolved_config(config, str(run_dir), snapshot)
    logger.info(f"Starting {command} in {run_dir}")
    return run_dir
