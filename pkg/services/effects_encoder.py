"""
Contrastive effects encoder, NT-Xent loss and downstream classifiers.

The encoder is a stack of residual conv blocks. Each block runs
conv (stride on the first conv) -> batch norm -> ReLU -> conv -> batch norm ->
ReLU and adds its input, projected by a strided 1x1 conv when the shape
changes. A 1x1 output conv produces the embedding channels, which are averaged
over time.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.checkpoint import Checkpoint
from core.errors import (
    CacheError,
    DegenerateLabelsError,
    DomainError,
    EmptyError,
    PairingError,
    ShapeError,
)
from models.schemas import EncoderConfig, MlpTrainConfig
from services.layers import (
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)
from services.optim import AdamState, adam_step

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "encoder"
RUNNING_SUFFIXES = (".running_mean", ".running_var")


# Encoder

@dataclass(eq=False)
class EncoderModel:
    """Encoder weights, batch-norm running statistics and the train/eval mode flag."""
    config: EncoderConfig
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]
    training: bool = False
    version: int = 0

    @property
    def n_blocks(self) -> int:
        return len(self.config.channels)

    @property
    def min_length(self) -> int:
        return self.config.stride ** self.n_blocks

    def block_inputs(self, block: int) -> int:
        return 1 if block == 0 else self.config.channels[block - 1]

    def has_projection(self, block: int) -> bool:
        return self.block_inputs(block) != self.config.channels[block] or self.config.stride != 1

    def bump(self) -> None:
        self.version += 1


@dataclass
class EncoderOutput:
    embeddings: np.ndarray
    cache: Optional["EncoderCache"] = None


@dataclass
class EncoderCache:
    version: int
    blocks: List[Dict[str, Any]] = field(default_factory=list)
    output: Any = None
    frames: int = 0


def block_key(block: int, name: str) -> str:
    return f"blocks.{block}.{name}"


def init_encoder(config: EncoderConfig, seed: int) -> EncoderModel:
    rng = np.random.default_rng(seed)
    k = config.kernel
    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {}
    model = EncoderModel(config, params, buffers)
    for b, c_out in enumerate(config.channels):
        c_in = model.block_inputs(b)
        for conv, fan_in in (("conv1", c_in), ("conv2", c_out)):
            bound = 1.0 / np.sqrt(fan_in * k)
            params[block_key(b, f"{conv}.weight")] = rng.uniform(-bound, bound, size=(c_out, fan_in, k))
        for bn in ("bn1", "bn2"):
            params[block_key(b, f"{bn}.gamma")] = np.ones(c_out)
            params[block_key(b, f"{bn}.beta")] = np.zeros(c_out)
            buffers[block_key(b, f"{bn}.running_mean")] = np.zeros(c_out)
            buffers[block_key(b, f"{bn}.running_var")] = np.ones(c_out)
        if model.has_projection(b):
            bound = 1.0 / np.sqrt(c_in)
            params[block_key(b, "proj.weight")] = rng.uniform(-bound, bound, size=(c_out, c_in, 1))
    bound = 1.0 / np.sqrt(config.channels[-1])
    params["output.weight"] = rng.uniform(-bound, bound, size=(config.embed_dim, config.channels[-1], 1))
    params["output.bias"] = np.zeros(config.embed_dim)
    return model


def encoder_param_count(model: EncoderModel) -> int:
    """Learnable parameters (running statistics excluded)."""
    return int(sum(v.size for v in model.params.values()))


def _bn(model: EncoderModel, x: np.ndarray, block: int, name: str, train: bool, update_running: bool) -> Tuple[np.ndarray, Any]:
    return batchnorm_forward(
        x,
        model.params[block_key(block, f"{name}.gamma")],
        model.params[block_key(block, f"{name}.beta")],
        model.buffers[block_key(block, f"{name}.running_mean")],
        model.buffers[block_key(block, f"{name}.running_var")],
        train=train,
        momentum=model.config.bn_momentum,
        eps=model.config.bn_eps,
        update_running=update_running,
    )


def encoder_forward(
    model: EncoderModel,
    clips: np.ndarray,
    train: Optional[bool] = None,
    update_running: bool = True,
) -> EncoderOutput:
    """
    Embed a batch of equal-length clips (B, T).

    Train mode (default: model.training) uses batch statistics, updates the
    running statistics unless update_running is False, and returns a cache.
    Eval mode uses running statistics and mutates nothing.
    """
    train = model.training if train is None else train
    x = np.asarray(clips, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ShapeError(f"Encoder input must be (B, T), got shape {np.shape(clips)}")
    if x.shape[1] < model.min_length:
        raise ShapeError(f"Clips of {x.shape[1]} samples are shorter than the encoder's downsampling factor {model.min_length}")

    k = model.config.kernel
    pad = (k - 1) // 2
    cache = EncoderCache(model.version) if train else None
    h = x[:, None, :]
    for b in range(model.n_blocks):
        stride = model.config.stride
        c1, c1_cache = conv1d_forward(h, model.params[block_key(b, "conv1.weight")], stride=stride, pad_left=pad, pad_right=pad)
        n1, n1_cache = _bn(model, c1, b, "bn1", train, update_running)
        a1, a1_cache = relu_forward(n1)
        c2, c2_cache = conv1d_forward(a1, model.params[block_key(b, "conv2.weight")], pad_left=pad, pad_right=pad)
        n2, n2_cache = _bn(model, c2, b, "bn2", train, update_running)
        a2, a2_cache = relu_forward(n2)
        if model.has_projection(b):
            skip, skip_cache = conv1d_forward(h, model.params[block_key(b, "proj.weight")], stride=stride)
        else:
            skip, skip_cache = h, None
        if skip.shape != a2.shape:
            raise ShapeError(f"Block {b}: residual {skip.shape} does not match main path {a2.shape}")
        h = a2 + skip
        if cache is not None:
            cache.blocks.append({
                "conv1": c1_cache, "bn1": n1_cache, "relu1": a1_cache,
                "conv2": c2_cache, "bn2": n2_cache, "relu2": a2_cache,
                "skip": skip_cache,
            })

    features, out_cache = conv1d_forward(h, model.params["output.weight"], model.params["output.bias"])
    if cache is not None:
        cache.output = out_cache
        cache.frames = features.shape[2]
    return EncoderOutput(features.mean(axis=2), cache)


def encoder_backward(model: EncoderModel, cache: EncoderCache, upstream: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Gradients for every encoder parameter and for the input clips."""
    if cache is None or cache.output is None:
        raise CacheError("Encoder backward needs the cache of a train-mode forward")
    if cache.version != model.version:
        raise CacheError(f"Encoder cache from parameter version {cache.version}, model is at {model.version}")

    grads: Dict[str, np.ndarray] = {}
    d_features = np.repeat(np.asarray(upstream, dtype=np.float64)[:, :, None] / cache.frames, cache.frames, axis=2)
    dh, grads["output.weight"], grads["output.bias"] = conv1d_backward(d_features, cache.output)
    for b in reversed(range(model.n_blocks)):
        entry = cache.blocks[b]
        d = relu_backward(dh, entry["relu2"])
        d, grads[block_key(b, "bn2.gamma")], grads[block_key(b, "bn2.beta")] = batchnorm_backward(d, entry["bn2"])
        d, grads[block_key(b, "conv2.weight")], _ = conv1d_backward(d, entry["conv2"])
        d = relu_backward(d, entry["relu1"])
        d, grads[block_key(b, "bn1.gamma")], grads[block_key(b, "bn1.beta")] = batchnorm_backward(d, entry["bn1"])
        d, grads[block_key(b, "conv1.weight")], _ = conv1d_backward(d, entry["conv1"])
        if entry["skip"] is not None:
            d_skip, grads[block_key(b, "proj.weight")], _ = conv1d_backward(dh, entry["skip"])
        else:
            d_skip = dh
        dh = d + d_skip
    return grads, dh[:, 0, :]


def embed_clips(model: EncoderModel, clips: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode embeddings of many clips, computed in batches."""
    x = np.asarray(clips, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyError("No clips to embed")
    parts = [encoder_forward(model, x[i:i + batch_size], train=False).embeddings for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(parts, axis=0)


def encoder_to_checkpoint(model: EncoderModel, extra: Optional[Dict[str, Any]] = None) -> Checkpoint:
    tensors = {name: value.astype(np.float32) for name, value in {**model.params, **model.buffers}.items()}
    return Checkpoint(CHECKPOINT_KIND, model.config.model_dump(mode="json"), tensors, dict(extra or {}))


def encoder_from_checkpoint(checkpoint: Checkpoint) -> EncoderModel:
    config = EncoderConfig.model_validate(checkpoint.config)
    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {}
    for name, value in checkpoint.tensors.items():
        target = buffers if name.endswith(RUNNING_SUFFIXES) else params
        target[name] = value.astype(np.float64)
    reference = init_encoder(config, 0)
    expected = {**reference.params, **reference.buffers}
    found = {**params, **buffers}
    if set(found) != set(expected) or any(found[k].shape != expected[k].shape for k in expected):
        raise ShapeError("Checkpoint tensors do not match the encoder configuration")
    return EncoderModel(config, params, buffers)


# NT-Xent

def _check_pairing(pair_index: np.ndarray, n_views: int) -> np.ndarray:
    pairs = np.asarray(pair_index, dtype=np.int64)
    if n_views < 2 or n_views % 2 or pairs.shape != (n_views,):
        raise PairingError(f"Need an even number of views >= 2 with one partner each, got {n_views} views and {pairs.shape} partners")
    if np.any(pairs < 0) or np.any(pairs >= n_views):
        raise PairingError("Partner index out of range")
    if np.any(pairs == np.arange(n_views)) or np.any(pairs[pairs] != np.arange(n_views)):
        raise PairingError("Partner mapping must be a fixed-point-free involution")
    return pairs


def _normalize(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("NT-Xent is undefined for zero embeddings")
    return z / norms, norms


def nt_xent_grad(embeddings: np.ndarray, pair_index: np.ndarray, temperature: float = 0.5) -> Tuple[float, np.ndarray]:
    """NT-Xent loss and its gradient with respect to the embeddings."""
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = np.asarray(embeddings, dtype=np.float64)
    n = z.shape[0]
    pairs = _check_pairing(pair_index, n)
    u, norms = _normalize(z)

    logits = u @ u.T / temperature
    np.fill_diagonal(logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    log_denominator = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_denominator - logits[rows, pairs]))

    probs = np.exp(logits - log_denominator[:, None])
    probs[rows, pairs] -= 1.0
    d_logits = probs / n
    d_u = (d_logits + d_logits.T) @ u / temperature
    d_z = (d_u - u * np.sum(u * d_u, axis=1, keepdims=True)) / norms
    return loss, d_z


def nt_xent(embeddings: np.ndarray, pair_index: np.ndarray, temperature: float = 0.5) -> float:
    """Mean over views of -log softmax(partner similarity) across the other 2N - 1 views."""
    return nt_xent_grad(embeddings, pair_index, temperature)[0]


# Classifiers

def l2_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0.0, norms, 1.0)


def knn_classify(reference: np.ndarray, labels: Sequence[Any], queries: np.ndarray, k: int = 5) -> np.ndarray:
    """
    Majority vote among the k nearest references (Euclidean, L2-normalized).

    A tied vote goes to the tied label whose member is nearest the query.
    """
    ref = np.asarray(reference, dtype=np.float64)
    labels = np.asarray(labels)
    if ref.shape[0] == 0:
        raise EmptyError("KNN needs at least one reference embedding")
    if not 1 <= k <= ref.shape[0]:
        raise DomainError(f"k must be in [1, {ref.shape[0]}], got {k}")
    ref_n = l2_normalize(ref)
    query_n = l2_normalize(np.atleast_2d(queries))

    predictions = []
    for q in query_n:
        distances = np.sum((ref_n - q) ** 2, axis=1)
        nearest = np.argsort(distances, kind="stable")[:k]
        values, counts = np.unique(labels[nearest], return_counts=True)
        tied = set(values[counts == counts.max()].tolist())
        predictions.append(next(labels[i] for i in nearest if labels[i].item() in tied))
    return np.array(predictions)


@dataclass(eq=False)
class MlpModel:
    """Single-hidden-layer classifier; classes[i] is the label of logit i."""
    params: Dict[str, np.ndarray]
    classes: np.ndarray
    version: int = 0

    def bump(self) -> None:
        self.version += 1


@dataclass
class MlpCache:
    version: int
    fc1: Any
    relu: Any
    fc2: Any


def mlp_param_count(in_dim: int, hidden: int, n_classes: int) -> int:
    return in_dim * hidden + hidden + hidden * n_classes + n_classes


def init_mlp(in_dim: int, hidden: int, classes: np.ndarray, seed: int) -> MlpModel:
    rng = np.random.default_rng(seed)
    n_classes = len(classes)
    b1, b2 = 1.0 / np.sqrt(in_dim), 1.0 / np.sqrt(hidden)
    params = {
        "fc1.weight": rng.uniform(-b1, b1, size=(hidden, in_dim)),
        "fc1.bias": rng.uniform(-b1, b1, size=hidden),
        "fc2.weight": rng.uniform(-b2, b2, size=(n_classes, hidden)),
        "fc2.bias": rng.uniform(-b2, b2, size=n_classes),
    }
    return MlpModel(params, np.asarray(classes))


def mlp_forward(model: MlpModel, x: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    hidden, fc1 = linear_forward(np.asarray(x, dtype=np.float64), model.params["fc1.weight"], model.params["fc1.bias"])
    act, relu = relu_forward(hidden)
    logits, fc2 = linear_forward(act, model.params["fc2.weight"], model.params["fc2.bias"])
    return logits, MlpCache(model.version, fc1, relu, fc2)


def mlp_backward(model: MlpModel, cache: MlpCache, upstream: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    if cache is None:
        raise CacheError("MLP backward needs a forward cache")
    if cache.version != model.version:
        raise CacheError(f"MLP cache from parameter version {cache.version}, model is at {model.version}")
    grads: Dict[str, np.ndarray] = {}
    d_act, grads["fc2.weight"], grads["fc2.bias"] = linear_backward(upstream, cache.fc2)
    d_hidden = relu_backward(d_act, cache.relu)
    dx, grads["fc1.weight"], grads["fc1.bias"] = linear_backward(d_hidden, cache.fc1)
    return grads, dx


def mlp_train(embeddings: np.ndarray, labels: Sequence[Any], hidden: int = 100, config: Optional[MlpTrainConfig] = None) -> MlpModel:
    """Train the classifier with softmax cross-entropy and Adam on L2-normalized embeddings."""
    config = config or MlpTrainConfig()
    x = l2_normalize(embeddings)
    labels = np.asarray(labels)
    if x.shape[0] != labels.shape[0]:
        raise ShapeError(f"{x.shape[0]} embeddings but {labels.shape[0]} labels")
    classes, targets = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise DegenerateLabelsError(f"Classifier needs at least two classes, got {classes.size}")

    model = init_mlp(x.shape[1], hidden, classes, config.seed)
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    batch = config.batch_size or x.shape[0]
    loss = float("nan")
    for _ in range(config.epochs):
        order = rng.permutation(x.shape[0]) if batch < x.shape[0] else np.arange(x.shape[0])
        for start in range(0, x.shape[0], batch):
            idx = order[start:start + batch]
            logits, cache = mlp_forward(model, x[idx])
            loss, d_logits = softmax_cross_entropy(logits, targets[idx])
            grads, _ = mlp_backward(model, cache, d_logits)
            adam_step(model.params, grads, state)
            model.bump()
    logger.info(f"Trained MLP on {x.shape[0]} embeddings, {classes.size} classes, final loss {loss:.4f}")
    return model


def mlp_predict(model: MlpModel, embeddings: np.ndarray) -> np.ndarray:
    logits, _ = mlp_forward(model, l2_normalize(embeddings))
    return model.classes[np.argmax(logits, axis=1)]


# Evaluation helpers

def class_balanced_split(labels: Sequence[Any], test_fraction: float = 0.15, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Train/test indices with test_fraction of every class held out (at least one when a class has two or more items)."""
    if not 0 < test_fraction < 1:
        raise DomainError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = rng or np.random.default_rng(0)
    labels = np.asarray(labels)
    train, test = [], []
    for value in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == value))
        n_test = max(1, int(round(test_fraction * members.size))) if members.size > 1 else 0
        test.extend(members[:n_test].tolist())
        train.extend(members[n_test:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


def accuracy(predicted: Sequence[Any], labels: Sequence[Any]) -> float:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ShapeError(f"{predicted.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.size == 0:
        raise EmptyError("accuracy of an empty set")
    return float(np.mean(predicted == labels))


def export_embeddings(path: str, clip_ids: Sequence[str], embeddings: np.ndarray) -> Path:
    """One JSON row per clip: {"clip_id": ..., "embedding": [...]}."""
    if len(clip_ids) != len(embeddings):
        raise ShapeError(f"{len(clip_ids)} clip ids for {len(embeddings)} embeddings")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w") as f:
        for clip_id, row in zip(clip_ids, np.asarray(embeddings, dtype=np.float64)):
            f.write(json.dumps({"clip_id": str(clip_id), "embedding": row.tolist()}) + "\n")
    logger.info(f"Exported {len(clip_ids)} embeddings to {target}")
    return target
