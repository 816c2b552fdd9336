"""
Reverse-mode gradient dispatch, loss gradients and finite-difference checks.

Each trainable model kind owns its backward pass (tcn_film, effects_encoder);
this module routes caches to them, exposes the loss gradients and verifies
everything against central finite differences.
"""

import logging
from typing import Any, Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.errors import CacheError, DomainError
from models.schemas import EncoderConfig, TcnConfig
from services import effects_encoder as enc
from services import metrics
from services import tcn_film as tcn
from services.layers import softmax_cross_entropy
from services.optim import GradSet

logger = logging.getLogger(__name__)

MODEL_KINDS = ("tcn", "encoder", "mlp")
LOSS_KINDS = ("esr", "mrsl", "combined", "nt_xent")
CHECK_KINDS = MODEL_KINDS + LOSS_KINDS

# Tolerances used by the gradcheck command.
TOLERANCES = {"tcn": 1e-4, "encoder": 1e-3, "mlp": 1e-5, "esr": 1e-5, "mrsl": 1e-4, "combined": 1e-4, "nt_xent": 1e-4}

# A check fails outright when kinks hide more than this share of the coordinates.
MAX_SKIPPED_FRACTION = 0.05


def backward_with_input(kind: str, model: Any, cache: Any, upstream: np.ndarray) -> Tuple[GradSet, np.ndarray]:
    """Parameter gradients plus the gradient with respect to the model input."""
    if cache is None:
        raise CacheError(f"No forward cache for {kind} backward")
    if kind == "tcn":
        return tcn.tcn_backward(model, cache, upstream)
    if kind == "encoder":
        return enc.encoder_backward(model, cache, upstream)
    if kind == "mlp":
        return enc.mlp_backward(model, cache, upstream)
    raise DomainError(f"Unknown model kind {kind}; expected one of {MODEL_KINDS}")


def backward(kind: str, model: Any, cache: Any, upstream: np.ndarray) -> GradSet:
    """Gradients of sum(upstream * output) for every parameter of `model`."""
    return backward_with_input(kind, model, cache, upstream)[0]


def loss_grad(
    kind: str,
    target: np.ndarray,
    pred: np.ndarray,
    resolutions: Optional[Sequence[metrics.StftConfig]] = None,
    pre_emph: Optional[float] = None,
    temperature: float = 0.5,
) -> np.ndarray:
    """
    Gradient of a loss with respect to `pred`.

    For "nt_xent", `pred` holds the 2N embeddings and `target` the pair index.
    """
    if kind == "esr":
        return metrics.esr_grad(target, pred, pre_emph)
    if kind == "mrsl":
        return metrics.mrsl_grad(target, pred, resolutions)
    if kind == "combined":
        return metrics.esr_grad(target, pred, pre_emph) + metrics.mrsl_grad(target, pred, resolutions)
    if kind == "nt_xent":
        return enc.nt_xent_grad(pred, target, temperature)[1]
    raise DomainError(f"Unknown loss {kind}; expected one of {LOSS_KINDS}")


# Finite-difference verification

def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


class GradComparison(NamedTuple):
    worst: float
    skipped: int
    checked: int


def compare_gradients(
    objective: Callable[[], float],
    arrays: Dict[str, np.ndarray],
    analytic: Dict[str, np.ndarray],
    eps: float,
) -> GradComparison:
    """
    Worst relative error between analytic gradients and central differences.

    Coordinates where the left and right one-sided differences disagree sit on
    a kink of a piecewise-linear op and are skipped. `checked` counts every
    coordinate visited, skipped ones included.
    """
    worst = 0.0
    skipped = 0
    checked = 0
    base = objective()
    for name, array in arrays.items():
        grad = analytic[name]
        for index in np.ndindex(array.shape):
            checked += 1
            original = array[index]
            array[index] = original + eps
            plus = objective()
            array[index] = original - eps
            minus = objective()
            array[index] = original

            right, left = (plus - base) / eps, (base - minus) / eps
            if abs(right - left) > 1e-2 * max(abs(right), abs(left), 1e-3):
                skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * eps)
            worst = max(worst, relative_error(float(grad[index]), numeric))
    return GradComparison(worst, skipped, checked)


def checked_error(comparison: GradComparison, max_skipped_fraction: float = MAX_SKIPPED_FRACTION) -> float:
    """The worst relative error, or inf when kinks hid more than `max_skipped_fraction` of the coordinates."""
    if comparison.checked == 0 or comparison.skipped > max_skipped_fraction * comparison.checked:
        return float("inf")
    return comparison.worst


def _check_tcn(rng: np.random.Generator, eps: float) -> GradComparison:
    config = TcnConfig(n_blocks=1, layers_per_block=2, channels=2, kernel=3, dilation_growth=2, embed_dim=3, n_devices=3)
    model = tcn.init_tcn(config, int(rng.integers(2**31)))
    for name, value in model.params.items():
        value += 0.1 * rng.standard_normal(value.shape)
    audio = rng.standard_normal((2, 16))
    devices = np.array([0, 2])
    upstream = rng.standard_normal((2, 16))

    out = tcn.tcn_forward(model, audio, devices, train=True)
    grads = backward("tcn", model, out.cache, upstream)
    objective = lambda: float(np.sum(upstream * tcn.tcn_forward(model, audio, devices).output))  # noqa: E731
    return compare_gradients(objective, model.params, grads, eps)


def _check_encoder(rng: np.random.Generator, eps: float) -> GradComparison:
    config = EncoderConfig(channels=(2, 3), kernel=3, stride=2, embed_dim=3)
    model = enc.init_encoder(config, int(rng.integers(2**31)))
    for value in model.params.values():
        value += 0.1 * rng.standard_normal(value.shape)
    clips = rng.standard_normal((3, 16))
    upstream = rng.standard_normal((3, 3))

    out = enc.encoder_forward(model, clips, train=True, update_running=False)
    grads = backward("encoder", model, out.cache, upstream)

    def objective() -> float:
        emb = enc.encoder_forward(model, clips, train=True, update_running=False).embeddings
        return float(np.sum(upstream * emb))

    return compare_gradients(objective, model.params, grads, eps)


def _check_mlp(rng: np.random.Generator, eps: float) -> GradComparison:
    model = enc.init_mlp(4, 5, np.arange(3), int(rng.integers(2**31)))
    x = rng.standard_normal((6, 4))
    labels = rng.integers(3, size=6)

    logits, cache = enc.mlp_forward(model, x)
    _, d_logits = softmax_cross_entropy(logits, labels)
    grads = backward("mlp", model, cache, d_logits)
    objective = lambda: softmax_cross_entropy(enc.mlp_forward(model, x)[0], labels)[0]  # noqa: E731
    return compare_gradients(objective, model.params, grads, eps)


def _check_loss(kind: str, rng: np.random.Generator, eps: float) -> GradComparison:
    if kind == "nt_xent":
        z = rng.standard_normal((6, 4))
        pairs = np.array([3, 4, 5, 0, 1, 2])
        grad = loss_grad("nt_xent", pairs, z)
        return compare_gradients(lambda: enc.nt_xent(z, pairs), {"z": z}, {"z": grad}, eps)

    resolutions = (metrics.StftConfig(16, 4), metrics.StftConfig(32, 8))
    n = 32 if kind == "esr" else 64
    target = rng.standard_normal(n)
    pred = target + 0.5 * rng.standard_normal(n)
    grad = loss_grad(kind, target, pred, resolutions)
    objective = lambda: metrics.loss_value(kind, target, pred, resolutions)  # noqa: E731
    return compare_gradients(objective, {"pred": pred}, {"pred": grad}, eps)


def grad_check(kind: str, seed: int = 0, eps: float = 1e-6) -> float:
    """
    Worst relative error of analytic vs central-difference gradients on a small random instance.

    Returns inf when too many coordinates sit on kinks to judge the gradient.
    """
    rng = np.random.default_rng(seed)
    if kind == "tcn":
        comparison = _check_tcn(rng, eps)
    elif kind == "encoder":
        comparison = _check_encoder(rng, eps)
    elif kind == "mlp":
        comparison = _check_mlp(rng, eps)
    elif kind in LOSS_KINDS:
        comparison = _check_loss(kind, rng, eps)
    else:
        raise DomainError(f"Unknown gradient check {kind}; expected one of {CHECK_KINDS}")
    worst = checked_error(comparison)
    if comparison.skipped:
        logger.debug(f"grad_check {kind} seed {seed}: skipped {comparison.skipped}/{comparison.checked} coordinates on kinks")
    if worst == float("inf"):
        logger.warning(f"grad_check {kind} seed {seed}: {comparison.skipped} of {comparison.checked} coordinates skipped on kinks")
    logger.info(f"grad_check {kind} seed {seed}: worst relative error {worst:.3e}")
    return worst
