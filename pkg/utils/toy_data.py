#!/usr/bin/env python3
"""
Toy captures and clean corpus for development and tests.

Toy captures are single-unit LSTMs whose input and output gates are pinned
open by large biases, so each behaves like a smooth waveshaper with a small
amount of memory set by the forget gate. The clean corpus is decaying
harmonic plucks.

Usage:
    python -m utils.toy_data --out data/toy
"""

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from core.config import configure_logging
from core.seeding import derive_rng
from models.audio import AudioClip
from models.device import DeviceModel
from services.model_zoo import serialize_model
from services.signal_io import write_wav

logger = logging.getLogger(__name__)

GATE_OPEN = 8.0

# (drive, asymmetry, level, memory) per toy capture
TOY_VOICES: Tuple[Tuple[float, float, float, float], ...] = (
    (0.5, 0.0, 1.0, -8.0),
    (1.5, 0.0, 0.8, -8.0),
    (3.0, 0.2, 0.6, -8.0),
    (6.0, -0.3, 0.5, -8.0),
    (2.0, 0.5, 0.7, -1.0),
    (4.0, 0.0, 0.5, 0.0),
    (10.0, 0.1, 0.4, -8.0),
    (1.0, -0.5, 0.9, -2.0),
)


def toy_capture(
    name: str,
    drive: float,
    asymmetry: float = 0.0,
    level: float = 1.0,
    memory: float = -GATE_OPEN,
    conditioned: bool = False,
    skip: bool = False,
) -> DeviceModel:
    """
    Single-unit LSTM capture.

    `memory` is the forget-gate bias: -8 gives a memoryless waveshaper, values
    near 0 add a one-pole smoothing of the cell state. A conditioned capture
    raises its drive with the conditioning value.
    """
    inputs = 2 if conditioned else 1
    weight_ih = np.zeros((4, inputs))
    weight_ih[2, 0] = drive
    if conditioned:
        weight_ih[2, 1] = asymmetry + 1.0
    bias = np.array([GATE_OPEN, memory, asymmetry, GATE_OPEN])
    return DeviceModel(
        name=name,
        input_size=inputs,
        hidden_size=1,
        weight_ih=weight_ih,
        weight_hh=np.zeros((4, 1)),
        bias_ih=bias,
        bias_hh=np.zeros(4),
        head_weight=np.array([level]),
        head_bias=-level * float(np.tanh(np.tanh(asymmetry))),
        skip=skip,
        metadata={"model": "SimpleRNN", "toy": True},
    )


def toy_captures(n: int, conditioned: int = 0) -> List[DeviceModel]:
    """n plain toy captures (cycling through TOY_VOICES with rising drive) plus `conditioned` conditioned ones."""
    models = []
    for k in range(n):
        drive, asym, level, memory = TOY_VOICES[k % len(TOY_VOICES)]
        drive *= 1.0 + 0.5 * (k // len(TOY_VOICES))
        models.append(toy_capture(f"toy_{k:03d}", drive, asym, level, memory))
    for k in range(conditioned):
        drive, asym, level, memory = TOY_VOICES[k % len(TOY_VOICES)]
        models.append(toy_capture(f"toy_cond_{k:03d}", drive, asym, level, memory, conditioned=True))
    return models


def write_toy_captures(models: Sequence[DeviceModel], out_dir: str) -> List[Path]:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for model in models:
        path = root / f"{model.name}.json"
        path.write_bytes(serialize_model(model))
        paths.append(path)
    logger.info(f"Wrote {len(paths)} toy captures to {root}")
    return paths


def pluck(sample_rate: int, seconds: float, frequency: float, rng: np.random.Generator) -> np.ndarray:
    """Decaying harmonic tone with random harmonic weights, peak about 0.8."""
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    tone = np.zeros_like(t)
    for harmonic in range(1, 7):
        if harmonic * frequency >= sample_rate / 2:
            break
        weight = rng.uniform(0.2, 1.0) / harmonic
        tone += weight * np.sin(2 * np.pi * harmonic * frequency * t + rng.uniform(0, 2 * np.pi))
    tone *= np.exp(-t * rng.uniform(1.5, 6.0))
    peak = np.max(np.abs(tone))
    return 0.8 * tone / peak if peak > 0 else tone


def toy_corpus(n_sources: int = 4, seconds: float = 4.0, sample_rate: int = 8000, seed: int = 0) -> Dict[str, AudioClip]:
    """Clean recordings named source_XX.wav, each a sequence of half-second plucks."""
    clips = {}
    for k in range(n_sources):
        rng = derive_rng(seed, k)
        notes = []
        remaining = int(round(seconds * sample_rate))
        while remaining > 0:
            note = pluck(sample_rate, 0.5, float(rng.uniform(80.0, 660.0)), rng)[:remaining]
            notes.append(note)
            remaining -= note.size
        clips[f"source_{k:02d}.wav"] = AudioClip(np.concatenate(notes).astype(np.float32), sample_rate)
    return clips


def write_toy_corpus(clips: Dict[str, AudioClip], out_dir: str) -> Path:
    root = Path(out_dir)
    for name, clip in clips.items():
        write_wav(clip, str(root / name))
    logger.info(f"Wrote {len(clips)} clean recordings to {root}")
    return root


def main() -> None:
    parser = argparse.ArgumentParser(description="Write toy captures and a clean corpus")
    parser.add_argument("--out", required=True, help="Output directory (gets models/ and corpus/)")
    parser.add_argument("--captures", type=int, default=8)
    parser.add_argument("--conditioned", type=int, default=0)
    parser.add_argument("--sources", type=int, default=4)
    parser.add_argument("--seconds", type=float, default=4.0)
    parser.add_argument("--sample-rate", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    configure_logging()
    out = Path(args.out)
    write_toy_captures(toy_captures(args.captures, args.conditioned), str(out / "models"))
    write_toy_corpus(toy_corpus(args.sources, args.seconds, args.sample_rate, args.seed), str(out / "corpus"))


if __name__ == "__main__":
    main()
