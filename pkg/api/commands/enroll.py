"""
Enrollment of an unseen device into a foundation model, and the data-budget sweep.
"""

import argparse
import json
import logging

from pydantic import ValidationError

from api.commands.common import add_config_argument, load_config, start_run
from core.errors import ConfigError
from models.schemas import EnrollConfig, EnrollSection, RunConfig
from services.augmentation import load_pair_directory
from services.metrics import to_db
from services.trainer import enroll_device, enrollment_sweep

logger = logging.getLogger(__name__)

SWEEP_NAME = "sweep.json"
SUMMARY_NAME = "summary.json"


def _section(config: RunConfig) -> EnrollSection:
    if config.enroll is None:
        raise ConfigError("Run config has no 'enroll' section")
    return config.enroll


def cmd_enroll(args: argparse.Namespace) -> int:
    config = load_config(args)
    section = _section(config)
    if args.fraction is not None:
        try:
            settings = EnrollConfig.model_validate({**section.settings.model_dump(), "data_fraction": args.fraction})
        except ValidationError as e:
            raise ConfigError(f"Invalid --fraction {args.fraction}: {e}") from e
        section = section.model_copy(update={"settings": settings})
        config = config.model_copy(update={"enroll": section})
    pairs = load_pair_directory(section.pairs_dir, config.train.clip_seconds)
    run_dir = start_run(config, "enroll")

    result = enroll_device(section.checkpoint, pairs, section.settings, str(run_dir))
    summary = {
        "device_index": result.device_index,
        "initial_index": result.initial_index,
        "data_fraction": section.settings.data_fraction,
        "train_items": result.train_items,
        "best_step": result.best_step,
        "test_loss": result.test_loss,
        "test_db": to_db(result.test_loss),
        "initial_test_loss": result.initial_test_loss,
        "untrained_test_loss": result.untrained_test_loss,
    }
    with open(run_dir / SUMMARY_NAME, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(
        f"enrolled as row {result.device_index} from row {result.initial_index} on {result.train_items} pairs: "
        f"test loss {result.test_loss:.4f} ({summary['test_db']:.2f} dB)"
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args)
    section = _section(config)
    pairs = load_pair_directory(section.pairs_dir, config.train.clip_seconds)
    run_dir = start_run(config, "sweep")

    rows = enrollment_sweep(section.checkpoint, pairs, section.fractions, section.settings, config.train.lr)
    payload = [
        {
            "fraction": row.fraction,
            "train_items": row.train_items,
            "enrolled_test_loss": row.enrolled_test_loss,
            "enrolled_test_db": row.enrolled_test_db,
            "baseline_test_loss": row.baseline_test_loss,
            "baseline_test_db": row.baseline_test_db,
        }
        for row in rows
    ]
    with open(run_dir / SWEEP_NAME, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    print(f"{'fraction':>9}  {'pairs':>6}  {'enrolled dB':>11}  {'baseline dB':>11}")
    for row in rows:
        print(f"{row.fraction:>9g}  {row.train_items:>6}  {row.enrolled_test_db:>11.2f}  {row.baseline_test_db:>11.2f}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("enroll", help="Learn an embedding for an unseen device")
    add_config_argument(parser)
    parser.add_argument("--fraction", type=float, default=None, help="Fraction of the training split to use")
    parser.set_defaults(func=cmd_enroll)

    parser = subparsers.add_parser("sweep", help="Compare enrollment with one-to-one baselines across data fractions")
    add_config_argument(parser)
    parser.set_defaults(func=cmd_sweep)
