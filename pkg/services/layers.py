"""
Numpy layer kernels with local backward passes.

Activations are laid out (batch, channels, time). Each forward returns its
output and a cache tuple; the matching backward takes that cache and the
upstream gradient and returns input and parameter gradients.
"""

from typing import Any, Dict, Optional, Tuple

import numpy as np

from core.errors import ShapeError

Cache = Tuple[Any, ...]


# Convolution

def _tap(xp: np.ndarray, k: int, dilation: int, stride: int, length: int) -> np.ndarray:
    start = k * dilation
    return xp[:, :, start:start + stride * (length - 1) + 1:stride]


def conv1d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    dilation: int = 1,
    pad_left: int = 0,
    pad_right: int = 0,
) -> Tuple[np.ndarray, Cache]:
    """
    1-D convolution (cross-correlation) of x (N, Cin, T) with weight (Cout, Cin, K).

    Output length is (T + pads - dilation*(K-1) - 1) // stride + 1.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d input {x.shape} does not match weight {weight.shape}")
    kernel = weight.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad_left, pad_right))) if (pad_left or pad_right) else x
    span = dilation * (kernel - 1) + 1
    if xp.shape[2] < span:
        raise ShapeError(f"conv1d input of length {x.shape[2]} is shorter than the kernel span {span}")
    length = (xp.shape[2] - span) // stride + 1

    y = np.zeros((x.shape[0], weight.shape[0], length), dtype=np.result_type(x, weight))
    for k in range(kernel):
        y += np.matmul(weight[:, :, k], _tap(xp, k, dilation, stride, length))
    if bias is not None:
        y += bias[None, :, None]
    return y, (xp, weight, bias is not None, stride, dilation, pad_left, x.shape[2])


def conv1d_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Returns (dx, dweight, dbias); dbias is None for a bias-free conv."""
    xp, weight, has_bias, stride, dilation, pad_left, length_in = cache
    kernel = weight.shape[2]
    length = dy.shape[2]
    dxp = np.zeros_like(xp)
    dweight = np.zeros_like(weight)
    for k in range(kernel):
        tap = _tap(xp, k, dilation, stride, length)
        dweight[:, :, k] = np.tensordot(dy, tap, axes=([0, 2], [0, 2]))
        start = k * dilation
        dxp[:, :, start:start + stride * (length - 1) + 1:stride] += np.matmul(weight[:, :, k].T, dy)
    dbias = dy.sum(axis=(0, 2)) if has_bias else None
    return dxp[:, :, pad_left:pad_left + length_in], dweight, dbias


# Normalization

def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_running: bool = True,
) -> Tuple[np.ndarray, Cache]:
    """
    Per-channel batch normalization over (batch, time).

    In train mode batch statistics are used and, when update_running is set,
    the running statistics are updated in place (unbiased variance).
    """
    if train:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        if update_running:
            count = x.shape[0] * x.shape[2]
            unbiased = var * count / max(count - 1, 1)
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    return y, (xhat, inv_std, gamma, train)


def batchnorm_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv_std, gamma, train = cache
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[None, :, None]
    if not train:
        return dxhat * inv_std[None, :, None], dgamma, dbeta
    count = xhat.shape[0] * xhat.shape[2]
    sum_d = dxhat.sum(axis=(0, 2), keepdims=True)
    sum_dx = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
    dx = inv_std[None, :, None] / count * (count * dxhat - sum_d - xhat * sum_dx)
    return dx, dgamma, dbeta


# Activations

def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    mask = x > 0
    return x * mask, (mask,)


def relu_backward(dy: np.ndarray, cache: Cache) -> np.ndarray:
    (mask,) = cache
    return dy * mask


def prelu_forward(x: np.ndarray, alpha: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """Per-channel parametric rectifier: x for x > 0, alpha[c]*x otherwise."""
    positive = x > 0
    y = np.where(positive, x, alpha[None, :, None] * x)
    return y, (x, positive, alpha)


def prelu_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (dx, dalpha)."""
    x, positive, alpha = cache
    dx = np.where(positive, dy, alpha[None, :, None] * dy)
    dalpha = np.where(positive, 0.0, dy * x).sum(axis=(0, 2))
    return dx, dalpha


# Feature-wise modulation

def film_forward(features: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """out[n, c, t] = gamma[n, c] * features[n, c, t] + beta[n, c]."""
    if features.ndim != 3 or gamma.shape != features.shape[:2] or beta.shape != features.shape[:2]:
        raise ShapeError(f"FiLM parameters {gamma.shape}/{beta.shape} do not match features {features.shape}")
    return gamma[:, :, None] * features + beta[:, :, None], (features, gamma)


def film_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dfeatures, dgamma, dbeta)."""
    features, gamma = cache
    return dy * gamma[:, :, None], (dy * features).sum(axis=2), dy.sum(axis=2)


# Dense

def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """x (N, in) -> (N, out) with weight (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear input {x.shape} does not match weight {weight.shape}")
    return x @ weight.T + bias, (x, weight)


def linear_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dweight, dbias)."""
    x, weight = cache
    return dy @ weight, dy.T @ x, dy.sum(axis=0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def count_parameters(params: Dict[str, np.ndarray], exclude_prefix: Tuple[str, ...] = ()) -> int:
    return int(sum(v.size for k, v in params.items() if not k.startswith(exclude_prefix)))
