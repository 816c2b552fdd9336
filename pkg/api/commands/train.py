"""
Training commands: one-to-many foundation TCN, one-to-one baseline and
contrastive effects encoder.
"""

import argparse
import json
import logging
from pathlib import Path

from api.commands.common import add_config_argument, load_config, load_inputs, start_run
from core.errors import UsageError
from services.trainer import device_identification, train_encoder, train_foundation, train_one_to_one

logger = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"


def _write_summary(run_dir: Path, summary: dict) -> None:
    with open(run_dir / SUMMARY_NAME, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_train_foundation(args: argparse.Namespace) -> int:
    config = load_config(args)
    registry, corpus = load_inputs(config)
    run_dir = start_run(config, "train-foundation", {"devices": [d.label for d in registry]})
    result = train_foundation(registry, corpus, config.train, config.tcn, str(run_dir))
    _write_summary(run_dir, {"devices": registry.M, "initial_loss": result.initial_loss, "final_loss": result.final_loss})
    print(f"train loss {result.initial_loss:.4f} -> {result.final_loss:.4f}; checkpoint {result.checkpoint_path}")
    return 0


def cmd_train_one_to_one(args: argparse.Namespace) -> int:
    config = load_config(args)
    registry, corpus = load_inputs(config)
    device = registry.device(args.device)
    run_dir = start_run(config, "train-one-to-one", {"device": device.label, "arguments": {"device": args.device}})
    result = train_one_to_one(registry, args.device, corpus, config.train, config.tcn, str(run_dir))
    _write_summary(run_dir, {"device_id": args.device, "initial_loss": result.initial_loss, "final_loss": result.final_loss})
    print(f"{device.label}: train loss {result.initial_loss:.4f} -> {result.final_loss:.4f}")
    return 0


def cmd_train_encoder(args: argparse.Namespace) -> int:
    if args.eval_clips < 0:
        raise UsageError(f"--eval-clips must be non-negative, got {args.eval_clips}")
    if args.export_embeddings and not args.eval_clips:
        raise UsageError("--export-embeddings needs --eval-clips")
    config = load_config(args)
    registry, corpus = load_inputs(config)
    arguments = {"eval_clips": args.eval_clips, "export_embeddings": args.export_embeddings}
    run_dir = start_run(config, "train-encoder", {"devices": registry.M, "arguments": arguments})
    result = train_encoder(registry, corpus, config.train, config.encoder, str(run_dir))
    summary = {"initial_heldout": result.initial_heldout, "final_heldout": result.final_heldout}
    if args.eval_clips:
        scores = device_identification(
            result.model,
            registry,
            corpus,
            args.eval_clips,
            config.train.clip_seconds,
            config.train.seed,
            export_path=args.export_embeddings,
        )
        summary.update(knn_accuracy=scores.knn_accuracy, mlp_accuracy=scores.mlp_accuracy, test_items=scores.test_items)
        if scores.embeddings_path is not None:
            summary["embeddings"] = str(scores.embeddings_path)
    _write_summary(run_dir, summary)
    print(f"held-out NT-Xent {result.initial_heldout:.4f} -> {result.final_heldout:.4f}")
    if "knn_accuracy" in summary:
        print(f"KNN device accuracy {summary['knn_accuracy']:.3f} (chance {1.0 / registry.M:.3f})")
    if summary.get("mlp_accuracy") is not None:
        print(f"MLP device accuracy {summary['mlp_accuracy']:.3f}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train-foundation", help="Train the one-to-many TCN on every registry device")
    add_config_argument(parser)
    parser.set_defaults(func=cmd_train_foundation)

    parser = subparsers.add_parser("train-one-to-one", help="Train a baseline TCN for one device")
    add_config_argument(parser)
    parser.add_argument("--device", type=int, required=True, help="Registry device id")
    parser.set_defaults(func=cmd_train_one_to_one)

    parser = subparsers.add_parser("train-encoder", help="Train the contrastive effects encoder")
    add_config_argument(parser)
    parser.add_argument("--eval-clips", type=int, default=0, help="Clips per device for KNN and MLP device identification after training")
    parser.add_argument("--export-embeddings", default=None, help="With --eval-clips, write the evaluation embeddings as JSONL here")
    parser.set_defaults(func=cmd_train_encoder)
