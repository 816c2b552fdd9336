"""
Adam optimizer over named parameter dictionaries.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from core.config import get_config
from core.errors import NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)

GradSet = Dict[str, np.ndarray]


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a set of named parameters."""
    lr: float = field(default_factory=lambda: get_config().train.adam_lr)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def global_norm(grads: GradSet) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: GradSet, max_norm: Optional[float]) -> float:
    """Scale grads in place so their global norm is at most max_norm; returns the norm before clipping."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adam_step(params: Dict[str, np.ndarray], grads: GradSet, state: AdamState, names: Optional[Iterable[str]] = None) -> None:
    """
    One Adam update of params in place, for `names` (default: every gradient).

    The whole step is refused, leaving params and state untouched, if any
    gradient is non-finite.
    """
    keys = list(grads if names is None else names)
    for key in keys:
        if key not in params:
            raise ShapeError(f"Gradient for unknown parameter {key}")
        if grads[key].shape != params[key].shape:
            raise ShapeError(f"Gradient {key} has shape {grads[key].shape}, parameter has {params[key].shape}")
        if not np.all(np.isfinite(grads[key])):
            raise NonFiniteGradientError(f"Non-finite gradient for {key} at step {state.step + 1}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for key in keys:
        g = grads[key]
        m = state.m.setdefault(key, np.zeros_like(params[key]))
        v = state.v.setdefault(key, np.zeros_like(params[key]))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[key] -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
