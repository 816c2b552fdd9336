"""
Supervised dataset export and manifest replay.
"""

import argparse
import logging
from pathlib import Path
from typing import List

import numpy as np

from api.commands.common import add_config_argument, load_config, load_inputs, start_run
from core.errors import ConfigError, UsageError
from core.seeding import derive_rng
from models.device import DeviceRegistry
from models.schemas import AugmentSection
from services.augmentation import MANIFEST_NAME, make_supervised_dataset, read_manifest, replay_record
from services.signal_io import Corpus, read_wav, write_wav

logger = logging.getLogger(__name__)

DATASET_DIR = "dataset"


def select_devices(section: AugmentSection, registry: DeviceRegistry) -> List[int]:
    """Explicit device_ids, a seeded draw of n_devices, or every device."""
    if section.device_ids is not None:
        for device_id in section.device_ids:
            registry.device(device_id)
        return list(section.device_ids)
    if section.n_devices is not None:
        if section.n_devices > registry.M:
            raise ConfigError(f"n_devices {section.n_devices} exceeds the {registry.M} devices in the registry")
        picked = derive_rng(section.seed).choice(registry.M, size=section.n_devices, replace=False)
        return sorted(int(d) for d in picked)
    return list(range(registry.M))


def _replay(args: argparse.Namespace, dataset_dir: Path, registry: DeviceRegistry, corpus: Corpus) -> int:
    records = {r.clip_path: r for r in read_manifest(str(dataset_dir / MANIFEST_NAME))}
    record = records.get(args.replay)
    if record is None:
        raise UsageError(f"{args.replay} is not in {dataset_dir / MANIFEST_NAME}")
    replayed = replay_record(record, corpus, registry)
    stored = read_wav(str(dataset_dir / record.clip_path))
    if args.out:
        write_wav(replayed, args.out)
    if np.array_equal(replayed.samples, stored.samples):
        print(f"{record.clip_path}: replay matches")
        return 0
    print(f"{record.clip_path}: replay differs from the stored clip")
    return 1


def cmd_augment(args: argparse.Namespace) -> int:
    config = load_config(args)
    if config.augment is None:
        raise ConfigError("Run config has no 'augment' section")
    section = config.augment
    registry, corpus = load_inputs(config)
    dataset_dir = Path(config.run_dir) / DATASET_DIR

    if args.replay:
        return _replay(args, dataset_dir, registry, corpus)

    device_ids = select_devices(section, registry)
    start_run(config, "augment", {"device_ids": device_ids})
    records = make_supervised_dataset(
        corpus,
        registry,
        device_ids,
        section.clips_per_device,
        section.duration_s,
        str(dataset_dir),
        section.seed,
        workers=section.workers,
    )
    print(f"wrote {len(records)} clips for {len(device_ids)} devices to {dataset_dir}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("augment", help="Render a supervised dataset with a replayable manifest")
    add_config_argument(parser)
    parser.add_argument("--replay", default=None, help="Re-render this manifest clip_path and compare it with the stored file")
    parser.add_argument("--out", default=None, help="With --replay, also write the re-rendered clip here")
    parser.set_defaults(func=cmd_augment)
