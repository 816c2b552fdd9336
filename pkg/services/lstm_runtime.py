"""
Sample-serial LSTM inference for capture models.

The recurrence runs in float32. Input contributions to the gate
pre-activations are computed for the whole block up front; the per-sample loop
then applies the same sequence of numpy operations to every sample, so the
output does not depend on how a signal is split into blocks.
"""

import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.errors import ConditioningError, NonFiniteValueError, ShapeError
from models.audio import AudioClip
from models.device import DeviceModel, SyntheticDevice

logger = logging.getLogger(__name__)


@dataclass
class LstmState:
    """Recurrent state carried between blocks."""
    h: np.ndarray
    c: np.ndarray


def init_state(model: DeviceModel) -> LstmState:
    return LstmState(
        h=np.zeros(model.hidden_size, dtype=np.float32),
        c=np.zeros(model.hidden_size, dtype=np.float32),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.float32(0.5) * (np.tanh(np.float32(0.5) * z) + np.float32(1.0))


def _check_conditioning(model: DeviceModel, cond: Optional[float]) -> None:
    if model.conditioned and cond is None:
        raise ConditioningError(f"Model {model.name} is conditioned and needs a conditioning value")
    if not model.conditioned and cond is not None:
        raise ConditioningError(f"Model {model.name} takes no conditioning value")
    if cond is not None and not np.isfinite(cond):
        raise NonFiniteValueError("Conditioning value is not finite")


def process_block(model: DeviceModel, state: LstmState, samples: np.ndarray, cond: Optional[float] = None) -> np.ndarray:
    """
    Run the LSTM over one block, mutating `state` to the final (h, c).

    Gate rows are input, forget, cell, output. Output is head . h_t + head_bias,
    plus x_t when the capture has the skip flag.
    """
    _check_conditioning(model, cond)
    x = np.asarray(samples, dtype=np.float32)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError(f"Input block must be a non-empty 1-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValueError("Input block contains non-finite samples")

    hidden = model.hidden_size
    bias = model.bias_ih + model.bias_hh
    drive = np.outer(x, model.weight_ih[:, 0]) + bias
    if cond is not None:
        drive += np.float32(cond) * model.weight_ih[:, 1]
    drive = drive.astype(np.float32, copy=False)

    w_hh = model.weight_hh
    head = model.head_weight
    head_bias = np.float32(model.head_bias)
    h = state.h.astype(np.float32, copy=True)
    c = state.c.astype(np.float32, copy=True)
    out = np.empty(x.shape[0], dtype=np.float32)

    for t in range(x.shape[0]):
        z = drive[t] + w_hh @ h
        i = _sigmoid(z[:hidden])
        f = _sigmoid(z[hidden:2 * hidden])
        g = np.tanh(z[2 * hidden:3 * hidden])
        o = _sigmoid(z[3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = np.dot(head, h) + head_bias

    if model.skip:
        out += x
    state.h = h
    state.c = c
    return out


def render(model: DeviceModel, clip: AudioClip, cond: Optional[float] = None, warmup_samples: int = 0) -> AudioClip:
    """
    Render a clip from zero state.

    With warmup_samples > 0 the first N output samples are dropped, so the
    result is N samples shorter than the input.
    """
    if warmup_samples < 0 or (warmup_samples > 0 and warmup_samples >= len(clip)):
        raise ShapeError(f"warmup_samples {warmup_samples} must be in [0, {len(clip)})")
    state = init_state(model)
    out = process_block(model, state, clip.samples, cond)
    return AudioClip(out[warmup_samples:], clip.sample_rate)


def render_device(device: SyntheticDevice, clip: AudioClip) -> AudioClip:
    """Render through a registry device with its conditioning value."""
    return render(device.model, clip, device.conditioning_value)


def measure_realtime_factor(model: DeviceModel, sample_rate: int = 44100, seconds: float = 1.0, seed: int = 0) -> float:
    """Audio seconds rendered per wall-clock second on the calling thread."""
    rng = np.random.default_rng(seed)
    n = max(1, int(round(seconds * sample_rate)))
    x = (0.1 * rng.standard_normal(n)).astype(np.float32)
    cond = 0.5 if model.conditioned else None
    start = time.perf_counter()
    process_block(model, init_state(model), x, cond)
    elapsed = max(time.perf_counter() - start, 1e-9)
    factor = (n / sample_rate) / elapsed
    logger.info(f"Model {model.name} (H={model.hidden_size}) renders at {factor:.2f}x real time")
    return factor
