"""
One-to-many TCN conditioned by FiLM on a learnable device-embedding table.

Each layer: causal dilated conv -> FiLM (gamma, beta from the device embedding
through the layer's own adaptor) -> PReLU -> add 1x1-projected layer input.
Dilation restarts at every block: layer l of a block uses dilation_growth**l.
A 1x1 head maps the last layer's channels to the output sample.

Parameters are float64 while training and stored as float32 in checkpoints.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.checkpoint import Checkpoint
from core.errors import CacheError, DeviceIndexError, ShapeError
from models.schemas import TcnConfig
from services.layers import (
    conv1d_backward,
    conv1d_forward,
    film_backward,
    film_forward,
    prelu_backward,
    prelu_forward,
)

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "tcn"
EMBEDDING = "embedding.table"
HEAD_WEIGHT = "head.weight"
HEAD_BIAS = "head.bias"
PRELU_INIT = 0.25

DeviceIndex = Union[int, Sequence[int], np.ndarray]


@dataclass(eq=False)
class TcnModel:
    """TCN weights, FiLM adaptors and the M x E embedding table."""
    config: TcnConfig
    params: Dict[str, np.ndarray]
    version: int = 0

    @property
    def n_layers(self) -> int:
        return self.config.n_blocks * self.config.layers_per_block

    @property
    def embedding_table(self) -> np.ndarray:
        return self.params[EMBEDDING]

    def dilation(self, layer: int) -> int:
        return self.config.dilation_growth ** (layer % self.config.layers_per_block)

    def bump(self) -> None:
        """Mark parameters as changed; caches from earlier forwards become stale."""
        self.version += 1


@dataclass
class TcnOutput:
    output: np.ndarray
    cache: Optional["TcnCache"] = None


@dataclass
class TcnCache:
    version: int
    device_index: np.ndarray
    embeddings: np.ndarray
    layers: List[Dict[str, Any]] = field(default_factory=list)
    head: Any = None
    squeeze: bool = False


def layer_key(layer: int, name: str) -> str:
    return f"layers.{layer}.{name}"


def receptive_field(config: TcnConfig) -> int:
    """1 + n_blocks * (K - 1) * sum(D**l for l in 0..L-1)."""
    per_block = sum(config.dilation_growth ** l for l in range(config.layers_per_block))
    return 1 + config.n_blocks * (config.kernel - 1) * per_block


def tcn_param_count(config: TcnConfig) -> int:
    """Learnable parameters including the embedding table."""
    c, k, e = config.channels, config.kernel, config.embed_dim
    total = config.n_devices * e + c + 1
    for layer in range(config.n_blocks * config.layers_per_block):
        c_in = 1 if layer == 0 else c
        total += c * c_in * k + c  # conv
        total += 2 * c * e + 2 * c  # film adaptor
        total += c  # prelu
        total += c * c_in  # residual projection
    return total


def init_tcn(config: TcnConfig, seed: int) -> TcnModel:
    """Uniform fan-in initialization; FiLM starts near identity (gamma bias 1)."""
    rng = np.random.default_rng(seed)
    c, k, e = config.channels, config.kernel, config.embed_dim
    params: Dict[str, np.ndarray] = {
        EMBEDDING: rng.normal(0.0, config.embed_init_std, size=(config.n_devices, e)),
    }
    for layer in range(config.n_blocks * config.layers_per_block):
        c_in = 1 if layer == 0 else c
        bound = 1.0 / np.sqrt(c_in * k)
        params[layer_key(layer, "conv.weight")] = rng.uniform(-bound, bound, size=(c, c_in, k))
        params[layer_key(layer, "conv.bias")] = rng.uniform(-bound, bound, size=c)
        params[layer_key(layer, "film.weight")] = rng.normal(0.0, 1.0 / np.sqrt(e), size=(2 * c, e))
        params[layer_key(layer, "film.bias")] = np.concatenate([np.ones(c), np.zeros(c)])
        params[layer_key(layer, "act.alpha")] = np.full(c, PRELU_INIT)
        res_bound = 1.0 / np.sqrt(c_in)
        params[layer_key(layer, "res.weight")] = rng.uniform(-res_bound, res_bound, size=(c, c_in, 1))
    head_bound = 1.0 / np.sqrt(c)
    params[HEAD_WEIGHT] = rng.uniform(-head_bound, head_bound, size=(1, c, 1))
    params[HEAD_BIAS] = np.zeros(1)
    model = TcnModel(config, params)
    logger.debug(f"Initialized TCN with {tcn_param_count(config)} parameters, receptive field {receptive_field(config)}")
    return model


def embedding_lookup(table: np.ndarray, device_index: int) -> np.ndarray:
    """Copy of row device_index."""
    index = int(device_index)
    if not 0 <= index < table.shape[0]:
        raise DeviceIndexError(f"Device index {device_index} outside embedding table of {table.shape[0]} rows")
    return table[index].copy()


def film_apply(features: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """out[c, t] = gamma[c] * features[c, t] + beta[c]."""
    features = np.asarray(features, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if features.ndim != 2 or gamma.shape != (features.shape[0],) or beta.shape != (features.shape[0],):
        raise ShapeError(f"FiLM parameters {gamma.shape}/{beta.shape} do not match features {features.shape}")
    out, _ = film_forward(features[None], gamma[None], beta[None])
    return out[0]


def _batch_indices(model: TcnModel, device_index: DeviceIndex, batch: int) -> np.ndarray:
    indices = np.atleast_1d(np.asarray(device_index, dtype=np.int64))
    if indices.size == 1 and batch > 1:
        indices = np.full(batch, indices[0], dtype=np.int64)
    if indices.shape != (batch,):
        raise ShapeError(f"Got {indices.size} device indices for a batch of {batch}")
    m = model.embedding_table.shape[0]
    if np.any(indices < 0) or np.any(indices >= m):
        raise DeviceIndexError(f"Device indices {indices.tolist()} outside embedding table of {m} rows")
    return indices


def _modulation(model: TcnModel, layer: int, embeddings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    c = model.config.channels
    gb = embeddings @ model.params[layer_key(layer, "film.weight")].T + model.params[layer_key(layer, "film.bias")]
    return gb[:, :c], gb[:, c:]


def tcn_forward(model: TcnModel, audio: np.ndarray, device_index: DeviceIndex, train: bool = False) -> TcnOutput:
    """
    Render audio (T,) or (N, T) for the given device index (one, or one per item).

    Output has the input's shape. With train=True the activation cache needed
    by the backward pass is returned as well.
    """
    x = np.asarray(audio, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.ndim != 2 or x.shape[1] == 0:
        raise ShapeError(f"TCN input must be (T,) or (N, T) with T > 0, got {np.shape(audio)}")
    indices = _batch_indices(model, device_index, x.shape[0])
    embeddings = model.embedding_table[indices]

    cache = TcnCache(model.version, indices, embeddings, squeeze=squeeze) if train else None
    h = x[:, None, :]
    k = model.config.kernel
    for layer in range(model.n_layers):
        d = model.dilation(layer)
        conv, conv_cache = conv1d_forward(
            h,
            model.params[layer_key(layer, "conv.weight")],
            model.params[layer_key(layer, "conv.bias")],
            dilation=d,
            pad_left=(k - 1) * d,
        )
        gamma, beta = _modulation(model, layer, embeddings)
        modulated, film_cache = film_forward(conv, gamma, beta)
        act, act_cache = prelu_forward(modulated, model.params[layer_key(layer, "act.alpha")])
        res, res_cache = conv1d_forward(h, model.params[layer_key(layer, "res.weight")])
        h = act + res
        if cache is not None:
            cache.layers.append({"conv": conv_cache, "film": film_cache, "act": act_cache, "res": res_cache})

    out, head_cache = conv1d_forward(h, model.params[HEAD_WEIGHT], model.params[HEAD_BIAS])
    y = out[:, 0, :]
    if cache is not None:
        cache.head = head_cache
    return TcnOutput(y[0] if squeeze else y, cache)


def tcn_backward(model: TcnModel, cache: TcnCache, upstream: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Gradients for every TCN parameter and for the input audio."""
    if cache is None or cache.head is None:
        raise CacheError("TCN backward needs the cache of a train-mode forward")
    if cache.version != model.version:
        raise CacheError(f"TCN cache from parameter version {cache.version}, model is at {model.version}")

    dy = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        dy = dy[None]
    grads: Dict[str, np.ndarray] = {}
    dh, grads[HEAD_WEIGHT], grads[HEAD_BIAS] = conv1d_backward(dy[:, None, :], cache.head)

    d_embeddings = np.zeros_like(cache.embeddings)
    for layer in reversed(range(model.n_layers)):
        entry = cache.layers[layer]
        dmod, grads[layer_key(layer, "act.alpha")] = prelu_backward(dh, entry["act"])
        dconv, dgamma, dbeta = film_backward(dmod, entry["film"])
        dgb = np.concatenate([dgamma, dbeta], axis=1)
        film_weight = model.params[layer_key(layer, "film.weight")]
        grads[layer_key(layer, "film.weight")] = dgb.T @ cache.embeddings
        grads[layer_key(layer, "film.bias")] = dgb.sum(axis=0)
        d_embeddings += dgb @ film_weight
        dx_conv, grads[layer_key(layer, "conv.weight")], grads[layer_key(layer, "conv.bias")] = conv1d_backward(dconv, entry["conv"])
        dx_res, grads[layer_key(layer, "res.weight")], _ = conv1d_backward(dh, entry["res"])
        dh = dx_conv + dx_res

    d_table = np.zeros_like(model.embedding_table)
    np.add.at(d_table, cache.device_index, d_embeddings)
    grads[EMBEDDING] = d_table
    d_audio = dh[:, 0, :]
    return grads, d_audio[0] if cache.squeeze else d_audio


# Streaming

@dataclass
class TcnStream:
    """Left context of every layer input, carried between blocks."""
    device_index: int
    context: List[np.ndarray]


def init_stream(model: TcnModel, device_index: int) -> TcnStream:
    embedding_lookup(model.embedding_table, device_index)
    k = model.config.kernel
    context = []
    for layer in range(model.n_layers):
        c_in = 1 if layer == 0 else model.config.channels
        context.append(np.zeros((1, c_in, (k - 1) * model.dilation(layer))))
    return TcnStream(int(device_index), context)


def tcn_process_block(model: TcnModel, stream: TcnStream, block: np.ndarray) -> np.ndarray:
    """Render one block of a stream; concatenated outputs equal one tcn_forward over the whole signal."""
    x = np.asarray(block, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError(f"Stream block must be a non-empty 1-D array, got shape {x.shape}")
    embeddings = model.embedding_table[[stream.device_index]]
    h = x[None, None, :]
    for layer in range(model.n_layers):
        extended = np.concatenate([stream.context[layer], h], axis=2)
        keep = stream.context[layer].shape[2]
        if keep:
            stream.context[layer] = extended[:, :, extended.shape[2] - keep:]
        conv, _ = conv1d_forward(
            extended,
            model.params[layer_key(layer, "conv.weight")],
            model.params[layer_key(layer, "conv.bias")],
            dilation=model.dilation(layer),
        )
        gamma, beta = _modulation(model, layer, embeddings)
        modulated, _ = film_forward(conv, gamma, beta)
        act, _ = prelu_forward(modulated, model.params[layer_key(layer, "act.alpha")])
        res, _ = conv1d_forward(h, model.params[layer_key(layer, "res.weight")])
        h = act + res
    out, _ = conv1d_forward(h, model.params[HEAD_WEIGHT], model.params[HEAD_BIAS])
    return out[0, 0]


# Checkpoints

def tcn_to_checkpoint(model: TcnModel, extra: Optional[Dict[str, Any]] = None) -> Checkpoint:
    return Checkpoint(
        kind=CHECKPOINT_KIND,
        config=model.config.model_dump(),
        tensors={name: value.astype(np.float32) for name, value in model.params.items()},
        extra=dict(extra or {}),
    )


def tcn_from_checkpoint(checkpoint: Checkpoint) -> TcnModel:
    config = TcnConfig.model_validate(checkpoint.config)
    params = {name: value.astype(np.float64) for name, value in checkpoint.tensors.items()}
    expected = {name: value.shape for name, value in init_tcn(config, 0).params.items()}
    if set(params) != set(expected):
        missing, unknown = sorted(set(expected) - set(params)), sorted(set(params) - set(expected))
        raise ShapeError(f"Checkpoint TCN tensors do not match the config: missing {missing}, unexpected {unknown}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"Checkpoint tensor {name} has shape {params[name].shape}, config implies {shape}")
    return TcnModel(config, params)
