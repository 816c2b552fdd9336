"""
Offline rendering of a WAV file through one capture.
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from core.errors import EmptyClipError, ParseError, UsageError
from models.audio import AudioClip
from services.lstm_runtime import init_state, process_block
from services.model_zoo import parse_model_file
from services.signal_io import SUBTYPES, read_wav, write_wav

logger = logging.getLogger(__name__)


def cmd_render(args: argparse.Namespace) -> int:
    """Render --in through --model block by block and write --out."""
    try:
        raw = Path(args.model).read_bytes()
    except OSError as e:
        raise ParseError(f"Cannot read {args.model}: {e}") from e
    model = parse_model_file(raw, name=Path(args.model).stem)

    if args.cond is not None and not model.conditioned:
        raise UsageError(f"--cond given but {model.name} takes no conditioning input")
    if args.cond is None and model.conditioned:
        raise UsageError(f"{model.name} is conditioned; pass --cond in [0, 1]")
    if args.block < 1:
        raise UsageError(f"--block must be positive, got {args.block}")

    clip = read_wav(args.input)
    if len(clip) == 0:
        raise EmptyClipError(f"{args.input} holds no samples")
    state = init_state(model)
    blocks = [
        process_block(model, state, clip.samples[start:start + args.block], args.cond)
        for start in range(0, len(clip), args.block)
    ]
    out = AudioClip(np.concatenate(blocks), clip.sample_rate)
    clipped = write_wav(out, args.output, args.encoding)
    logger.info(f"Rendered {clip.duration:.2f} s through {model.name} to {args.output}")
    if clipped:
        print(f"clipped {clipped} samples")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("render", help="Render a WAV file through a capture")
    parser.add_argument("--model", required=True, help="Capture JSON file")
    parser.add_argument("--in", dest="input", required=True, help="Input WAV")
    parser.add_argument("--out", dest="output", required=True, help="Output WAV")
    parser.add_argument("--cond", type=float, default=None, help="Conditioning value for conditioned captures")
    parser.add_argument("--block", type=int, default=4096, help="Samples per processing block")
    parser.add_argument("--encoding", choices=sorted(SUBTYPES), default="float32")
    parser.set_defaults(func=cmd_render)
