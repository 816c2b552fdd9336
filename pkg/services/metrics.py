"""
Losses and evaluation: ESR, multi-resolution spectral loss, dB conversion and
per-device reports, with the analytic gradients used by training.

All computations run in float64.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import DegenerateTargetError, DomainError, ShapeError
from models.schemas import DeviceLoss, LossReport, QuantileEntry, StftResolution

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-7
PERCENTILES = ((0, "best"), (25, "p25"), (50, "median"), (75, "p75"), (100, "worst"))


@dataclass(frozen=True)
class StftConfig:
    """One STFT resolution with a periodic Hann window of length fft_size."""
    fft_size: int
    hop: int

    def __post_init__(self) -> None:
        n = self.fft_size
        if n < 2 or n & (n - 1):
            raise DomainError(f"fft_size must be a power of two >= 2, got {n}")
        if not 0 < self.hop <= n:
            raise DomainError(f"hop must be in [1, fft_size], got {self.hop}")

    @property
    def window(self) -> np.ndarray:
        n = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.fft_size)

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, length: int) -> int:
        return 1 + (length - self.fft_size) // self.hop


DEFAULT_RESOLUTIONS: Tuple[StftConfig, ...] = tuple(StftConfig(n, n // 4) for n in (512, 1024, 2048))


def resolutions_from(specs: Optional[Sequence[StftResolution]]) -> Tuple[StftConfig, ...]:
    if specs is None:
        return DEFAULT_RESOLUTIONS
    return tuple(StftConfig(s.fft_size, s.hop) for s in specs)


def _pair(target: np.ndarray, pred: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.ndim != 1 or t.shape != p.shape:
        raise ShapeError(f"target and pred must be equal-length 1-D signals, got {t.shape} and {p.shape}")
    if t.size == 0:
        raise ShapeError("Signals are empty")
    return t, p


def pre_emphasis(signal: np.ndarray, coefficient: float) -> np.ndarray:
    """y[0] = x[0], y[n] = x[n] - a*x[n-1]."""
    y = signal.copy()
    y[1:] -= coefficient * signal[:-1]
    return y


def _pre_emphasis_adjoint(grad: np.ndarray, coefficient: float) -> np.ndarray:
    out = grad.copy()
    out[:-1] -= coefficient * grad[1:]
    return out


# ESR

def esr(target: np.ndarray, pred: np.ndarray, pre_emph: Optional[float] = None) -> float:
    """Error-to-signal ratio sum((t - p)^2) / sum(t^2)."""
    t, p = _pair(target, pred)
    if pre_emph is not None:
        t, p = pre_emphasis(t, pre_emph), pre_emphasis(p, pre_emph)
    energy = float(np.dot(t, t))
    if energy == 0.0:
        raise DegenerateTargetError("Target has zero energy")
    r = t - p
    return float(np.dot(r, r)) / energy


def esr_grad(target: np.ndarray, pred: np.ndarray, pre_emph: Optional[float] = None) -> np.ndarray:
    """Gradient of esr with respect to pred."""
    t, p = _pair(target, pred)
    if pre_emph is not None:
        t, p = pre_emphasis(t, pre_emph), pre_emphasis(p, pre_emph)
    energy = float(np.dot(t, t))
    if energy == 0.0:
        raise DegenerateTargetError("Target has zero energy")
    grad = -2.0 * (t - p) / energy
    if pre_emph is not None:
        grad = _pre_emphasis_adjoint(grad, pre_emph)
    return grad


# STFT and MRSL

def _frames(signal: np.ndarray, cfg: StftConfig) -> np.ndarray:
    if signal.shape[0] < cfg.fft_size:
        raise ShapeError(f"Signal of {signal.shape[0]} samples is shorter than fft_size {cfg.fft_size}")
    return sliding_window_view(signal, cfg.fft_size)[::cfg.hop]


def _spectrum(signal: np.ndarray, cfg: StftConfig) -> np.ndarray:
    return np.fft.rfft(_frames(signal, cfg) * cfg.window, axis=-1)


def stft_mag(signal: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Magnitude spectrogram, frames x (fft_size/2 + 1). Frames start at multiples of hop, no padding."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"Signal must be 1-D, got shape {x.shape}")
    return np.abs(_spectrum(x, cfg))


def mrsl_terms(target: np.ndarray, pred: np.ndarray, resolutions: Optional[Sequence[StftConfig]] = None) -> List[Tuple[float, float]]:
    """(spectral convergence, mean L1 log-magnitude distance) per resolution."""
    t, p = _pair(target, pred)
    terms = []
    for cfg in resolutions or DEFAULT_RESOLUTIONS:
        mt, mp = stft_mag(t, cfg), stft_mag(p, cfg)
        norm_t = float(np.linalg.norm(mt))
        if norm_t == 0.0:
            raise DegenerateTargetError(f"Target spectrogram is zero at fft_size {cfg.fft_size}")
        sc = float(np.linalg.norm(mt - mp)) / norm_t
        log_t = np.log(np.maximum(mt, LOG_FLOOR))
        log_p = np.log(np.maximum(mp, LOG_FLOOR))
        terms.append((sc, float(np.mean(np.abs(log_t - log_p)))))
    return terms


def mrsl(target: np.ndarray, pred: np.ndarray, resolutions: Optional[Sequence[StftConfig]] = None) -> float:
    """Mean over resolutions of spectral convergence plus L1 log-magnitude distance."""
    terms = mrsl_terms(target, pred, resolutions)
    return float(np.mean([sc + lm for sc, lm in terms]))


def _overlap_add(frame_grads: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.float64)
    for k in range(frame_grads.shape[0]):
        start = k * cfg.hop
        out[start:start + cfg.fft_size] += frame_grads[k]
    return out


def mrsl_grad(target: np.ndarray, pred: np.ndarray, resolutions: Optional[Sequence[StftConfig]] = None) -> np.ndarray:
    """
    Gradient of mrsl with respect to pred.

    Chain: magnitude -> complex spectrum (Y/|Y|) -> real frames (adjoint rfft)
    -> window -> overlap-add. Kinks (|Y| = 0, clamped log, zero error) take a
    zero subgradient.
    """
    t, p = _pair(target, pred)
    configs = tuple(resolutions or DEFAULT_RESOLUTIONS)
    grad = np.zeros_like(p)
    for cfg in configs:
        mt = stft_mag(t, cfg)
        spec_p = _spectrum(p, cfg)
        mp = np.abs(spec_p)

        norm_t = float(np.linalg.norm(mt))
        if norm_t == 0.0:
            raise DegenerateTargetError(f"Target spectrogram is zero at fft_size {cfg.fft_size}")
        diff = mt - mp
        norm_d = float(np.linalg.norm(diff))
        d_mag = np.zeros_like(mp)
        if norm_d > 0.0:
            d_mag -= diff / (norm_d * norm_t)

        log_gap = np.log(np.maximum(mt, LOG_FLOOR)) - np.log(np.maximum(mp, LOG_FLOOR))
        above = mp > LOG_FLOOR
        d_log = np.zeros_like(mp)
        d_log[above] = -np.sign(log_gap[above]) / mp[above]
        d_mag += d_log / mp.size

        nonzero = mp > 0.0
        d_spec = np.zeros_like(spec_p)
        d_spec[nonzero] = d_mag[nonzero] * spec_p[nonzero] / mp[nonzero]

        # Adjoint of rfft: interior bins appear twice in the full spectrum.
        d_spec[:, 1:cfg.fft_size // 2] *= 0.5
        d_frames = cfg.fft_size * np.fft.irfft(d_spec, n=cfg.fft_size, axis=-1)
        grad += _overlap_add(d_frames * cfg.window, cfg, p.shape[0])
    return grad / len(configs)


# Combined losses

def combined_loss(
    target: np.ndarray,
    pred: np.ndarray,
    resolutions: Optional[Sequence[StftConfig]] = None,
    pre_emph: Optional[float] = None,
) -> float:
    """esr + mrsl."""
    return esr(target, pred, pre_emph) + mrsl(target, pred, resolutions)


def loss_value(
    kind: str,
    target: np.ndarray,
    pred: np.ndarray,
    resolutions: Optional[Sequence[StftConfig]] = None,
    pre_emph: Optional[float] = None,
) -> float:
    if kind == "esr":
        return esr(target, pred, pre_emph)
    if kind == "mrsl":
        return mrsl(target, pred, resolutions)
    if kind == "combined":
        return combined_loss(target, pred, resolutions, pre_emph)
    raise DomainError(f"Unknown loss {kind}")


# dB

def to_db(x: float) -> float:
    """10*log10(x)."""
    if not x > 0:
        raise DomainError(f"dB conversion needs a positive value, got {x}")
    return 10.0 * math.log10(x)


def from_db(db: float) -> float:
    return 10.0 ** (db / 10.0)


def _db_or_none(x: float) -> Optional[float]:
    return to_db(x) if x > 0 else None


# Reports

def device_report(per_device_losses: Mapping[int, Tuple[float, float]]) -> List[QuantileEntry]:
    """
    Best, 25th percentile, median, 75th percentile and worst devices.

    Devices are sorted by esr + mrsl (ties by device id); percentile p picks
    nearest rank max(1, ceil(p * n / 100)).
    """
    if not per_device_losses:
        raise DomainError("device_report needs at least one device")
    ranked = sorted(per_device_losses.items(), key=lambda item: (item[1][0] + item[1][1], item[0]))
    n = len(ranked)
    entries = []
    for percentile, label in PERCENTILES:
        rank = max(1, math.ceil(percentile * n / 100))
        device_id, (e, m) = ranked[rank - 1]
        entries.append(QuantileEntry(
            label=label,
            percentile=percentile,
            rank=rank,
            device_id=int(device_id),
            esr=e,
            mrsl=m,
            combined=e + m,
            esr_db=_db_or_none(e),
            mrsl_db=_db_or_none(m),
            combined_db=_db_or_none(e + m),
        ))
    return entries


def loss_report(
    pairs_by_device: Mapping[int, Sequence[Tuple[np.ndarray, np.ndarray]]],
    resolutions: Optional[Sequence[StftConfig]] = None,
    pre_emph: Optional[float] = None,
) -> LossReport:
    """
    LossReport over (target, pred) pairs grouped by device.

    Per-device values are means over that device's clips; overall values are
    means over all clips.
    """
    per_device: Dict[int, DeviceLoss] = {}
    all_esr: List[float] = []
    all_mrsl: List[float] = []
    for device_id in sorted(pairs_by_device):
        pairs = pairs_by_device[device_id]
        if not pairs:
            continue
        esrs = [esr(t, p, pre_emph) for t, p in pairs]
        mrsls = [mrsl(t, p, resolutions) for t, p in pairs]
        all_esr.extend(esrs)
        all_mrsl.extend(mrsls)
        e, m = float(np.mean(esrs)), float(np.mean(mrsls))
        per_device[int(device_id)] = DeviceLoss(
            device_id=int(device_id),
            n_clips=len(pairs),
            esr=e,
            mrsl=m,
            combined=e + m,
            esr_db=_db_or_none(e),
            mrsl_db=_db_or_none(m),
            combined_db=_db_or_none(e + m),
        )
    if not per_device:
        raise DomainError("loss_report needs at least one clip")

    e, m = float(np.mean(all_esr)), float(np.mean(all_mrsl))
    quantiles = device_report({d: (v.esr, v.mrsl) for d, v in per_device.items()})
    return LossReport(
        esr=e,
        mrsl=m,
        esr_db=_db_or_none(e),
        mrsl_db=_db_or_none(m),
        per_device=per_device,
        quantiles=quantiles,
    )


def export_report(report: LossReport, path: str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w") as f:
        json.dump(report.model_dump(mode="json"), f, indent=2)
        f.write("\n")
    logger.info(f"Wrote loss report for {len(report.per_device)} devices to {target}")
    return target
