"""
Checkpoint evaluation on an exported supervised dataset.
"""

import argparse
import logging
from pathlib import Path

from api.commands.common import add_config_argument, load_config, load_corpus, start_run
from core.errors import ConfigError
from services.augmentation import load_manifest_pairs
from services.metrics import export_report, resolutions_from
from services.trainer import evaluate_checkpoint

logger = logging.getLogger(__name__)

REPORT_NAME = "report.json"


def _db(value) -> str:
    return "n/a" if value is None else f"{value:.2f} dB"


def cmd_eval(args: argparse.Namespace) -> int:
    """Score a TCN checkpoint per device; manifest device ids index the embedding table."""
    config = load_config(args)
    if config.eval is None:
        raise ConfigError("Run config has no 'eval' section")
    corpus = load_corpus(config)
    pairs = load_manifest_pairs(config.eval.dataset_dir, corpus)
    run_dir = start_run(config, "eval")

    report = evaluate_checkpoint(
        config.eval.checkpoint,
        pairs,
        resolutions_from(config.train.resolutions),
        config.train.pre_emphasis,
    )
    export_report(report, str(Path(run_dir) / REPORT_NAME))
    print(f"ESR {report.esr:.5f} ({_db(report.esr_db)}), MRSL {report.mrsl:.5f} ({_db(report.mrsl_db)})")
    for entry in report.quantiles:
        print(f"{entry.label:>7}: device {entry.device_id:>4}  combined {entry.combined:.5f} ({_db(entry.combined_db)})")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("eval", help="Evaluate a TCN checkpoint on an exported dataset")
    add_config_argument(parser)
    parser.set_defaults(func=cmd_eval)
