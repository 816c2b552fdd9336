"""
Training procedures: one-to-many foundation TCN, one-to-one baselines,
contrastive encoder training and embedding-only enrollment of unseen devices.

Every procedure is deterministic given its seed: model initialization, batch
rendering and data splits each draw from their own derived seed, and batches
come from the worker-count-independent batch stream.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from core.errors import DivergenceError, EmptyError, ShapeError
from core.seeding import derive_rng, derive_seed
from models.audio import AudioClip
from models.device import DeviceRegistry
from models.schemas import (
    BatchSpec,
    EncoderConfig,
    EnrollConfig,
    LossLogRow,
    LossReport,
    MlpTrainConfig,
    TcnConfig,
    TrainConfig,
)
from services import effects_encoder as enc
from services import metrics
from services import tcn_film as tcn
from services.augmentation import ContrastiveBatch, PairedBatch, batch_stream, make_batch, render_pair
from services.autodiff import backward, loss_grad
from services.optim import AdamState, adam_step, clip_grad_norm
from services.signal_io import Corpus

logger = logging.getLogger(__name__)

ClipPair = Tuple[AudioClip, AudioClip]
TcnSource = Union[tcn.TcnModel, Checkpoint, str]

TCN_CHECKPOINT = "tcn.ckpt"
ENCODER_CHECKPOINT = "encoder.ckpt"
ENROLLED_CHECKPOINT = "enrolled.ckpt"
LOSS_LOG = "loss_log.jsonl"

# Seed streams derived from a run seed.
INIT_STREAM, BATCH_STREAM, VALIDATION_STREAM, SPLIT_STREAM = 0, 1, 2, 3


@dataclass
class TrainResult:
    """A trained TCN and its per-epoch loss log (row 0 is the untrained model)."""
    model: tcn.TcnModel
    log: List[LossLogRow]
    checkpoint_path: Optional[Path] = None

    @property
    def initial_loss(self) -> float:
        return self.log[0].train_loss

    @property
    def final_loss(self) -> float:
        return self.log[-1].train_loss


@dataclass
class EncoderTrainResult:
    model: enc.EncoderModel
    log: List[LossLogRow]
    initial_heldout: float
    final_heldout: float
    checkpoint_path: Optional[Path] = None


@dataclass
class EnrollmentResult:
    """Outcome of enrolling one unseen device as a new embedding row."""
    model: tcn.TcnModel
    device_index: int
    initial_index: int
    embedding: np.ndarray
    log: List[LossLogRow]
    train_items: int
    best_step: int
    test_loss: float
    initial_test_loss: float
    untrained_test_loss: float
    checkpoint_path: Optional[Path] = None


@dataclass
class SweepRow:
    fraction: float
    train_items: int
    enrolled_test_loss: float
    baseline_test_loss: float

    @property
    def enrolled_test_db(self) -> float:
        return metrics.to_db(self.enrolled_test_loss)

    @property
    def baseline_test_db(self) -> float:
        return metrics.to_db(self.baseline_test_loss)


def write_loss_log(rows: Sequence[LossLogRow], path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w") as f:
        for row in rows:
            f.write(row.model_dump_json() + "\n")
    return target


def read_loss_log(path: Union[str, Path]) -> List[LossLogRow]:
    with open(path, "r") as f:
        return [LossLogRow.model_validate_json(line) for line in f if line.strip()]


def _db(value: float) -> Optional[float]:
    return metrics.to_db(value) if value > 0 else None


# Shared TCN step

@dataclass
class _LossTerms:
    loss: float
    esr: float
    mrsl: float


def _batch_losses(
    kind: str,
    wet: np.ndarray,
    pred: np.ndarray,
    resolutions: Sequence[metrics.StftConfig],
    pre_emph: Optional[float],
) -> _LossTerms:
    esrs = [metrics.esr(w, p, pre_emph) for w, p in zip(wet, pred)]
    mrsls = [metrics.mrsl(w, p, resolutions) for w, p in zip(wet, pred)]
    e, m = float(np.mean(esrs)), float(np.mean(mrsls))
    loss = {"esr": e, "mrsl": m, "combined": e + m}[kind]
    return _LossTerms(loss, e, m)


def _tcn_loss_and_grads(
    model: tcn.TcnModel,
    clean: np.ndarray,
    wet: np.ndarray,
    device_ids: np.ndarray,
    kind: str,
    resolutions: Sequence[metrics.StftConfig],
    pre_emph: Optional[float],
) -> Tuple[float, Dict[str, np.ndarray]]:
    out = tcn.tcn_forward(model, clean, device_ids, train=True)
    pred = out.output
    n = pred.shape[0]
    losses = [metrics.loss_value(kind, wet[i], pred[i], resolutions, pre_emph) for i in range(n)]
    loss = float(np.mean(losses))
    if not np.isfinite(loss):
        raise DivergenceError(f"Training loss became {loss}")
    upstream = np.stack([loss_grad(kind, wet[i], pred[i], resolutions, pre_emph) for i in range(n)]) / n
    return loss, backward("tcn", model, out.cache, upstream)


def _evaluate_tcn(
    model: tcn.TcnModel,
    clean: np.ndarray,
    wet: np.ndarray,
    device_ids: Union[int, np.ndarray],
    kind: str,
    resolutions: Sequence[metrics.StftConfig],
    pre_emph: Optional[float],
) -> _LossTerms:
    pred = tcn.tcn_forward(model, clean, device_ids).output
    return _batch_losses(kind, wet, pred, resolutions, pre_emph)


# Foundation and one-to-one training

def train_foundation(
    registry: DeviceRegistry,
    corpus: Corpus,
    config: TrainConfig,
    tcn_config: Optional[TcnConfig] = None,
    run_dir: Optional[str] = None,
) -> TrainResult:
    """
    Train every TCN parameter and the embedding table on online-rendered pairs.

    Batch k is rendered from (derive_seed(seed, 1), k); a fixed validation batch
    from derive_seed(seed, 2) is scored before training and after every epoch.
    """
    tcn_config = (tcn_config or TcnConfig()).model_copy(update={"n_devices": registry.M})
    if registry.M == 1:
        logger.warning("Foundation training with a single device is one-to-one training")
    resolutions = metrics.resolutions_from(config.resolutions)
    corpus = corpus.prefix(config.data_fraction)

    model = tcn.init_tcn(tcn_config, derive_seed(config.seed, INIT_STREAM))
    state = AdamState(lr=config.lr)
    spec = BatchSpec(
        kind="paired",
        batch_size=config.batch_size,
        duration_s=config.clip_seconds,
        workers=config.workers,
        prefetch=config.prefetch,
    )
    validation = make_batch(spec, derive_seed(config.seed, VALIDATION_STREAM), 0, corpus, registry)
    batch_seed = derive_seed(config.seed, BATCH_STREAM)
    total_steps = config.epochs * config.steps_per_epoch

    def validate() -> _LossTerms:
        assert isinstance(validation, PairedBatch)
        return _evaluate_tcn(model, validation.clean, validation.wet, validation.device_ids, config.loss, resolutions, config.pre_emphasis)

    log: List[LossLogRow] = []
    epoch_losses: List[float] = []
    logger.info(
        f"Training TCN on {registry.M} devices: {total_steps} steps of {config.batch_size} x {config.clip_seconds} s, "
        f"{tcn.tcn_param_count(tcn_config)} parameters"
    )
    for step, batch in enumerate(batch_stream(spec, batch_seed, corpus, registry, n_batches=total_steps), start=1):
        assert isinstance(batch, PairedBatch)
        loss, grads = _tcn_loss_and_grads(model, batch.clean, batch.wet, batch.device_ids, config.loss, resolutions, config.pre_emphasis)
        if step == 1:
            val = validate()
            log.append(LossLogRow(step=0, epoch=0, train_loss=loss, val_loss=val.loss, esr_db=_db(val.esr), mrsl_db=_db(val.mrsl)))
        clip_grad_norm(grads, config.grad_clip)
        adam_step(model.params, grads, state)
        model.bump()
        epoch_losses.append(loss)

        if step % config.steps_per_epoch == 0:
            epoch = step // config.steps_per_epoch
            val = validate()
            row = LossLogRow(
                step=step,
                epoch=epoch,
                train_loss=float(np.mean(epoch_losses)),
                val_loss=val.loss,
                esr_db=_db(val.esr),
                mrsl_db=_db(val.mrsl),
            )
            log.append(row)
            epoch_losses = []
            logger.info(f"Epoch {epoch}/{config.epochs}: train {row.train_loss:.4f}, val {row.val_loss:.4f}")

    result = TrainResult(model, log)
    if run_dir is not None:
        out = Path(run_dir)
        result.checkpoint_path = save_checkpoint(str(out / TCN_CHECKPOINT), tcn.tcn_to_checkpoint(model, {"devices": [d.label for d in registry]}))
        write_loss_log(log, out / LOSS_LOG)
    return result


def train_one_to_one(
    registry: DeviceRegistry,
    device_id: int,
    corpus: Corpus,
    config: TrainConfig,
    tcn_config: Optional[TcnConfig] = None,
    run_dir: Optional[str] = None,
) -> TrainResult:
    """Baseline TCN for one device: foundation training on a single-device registry."""
    return train_foundation(registry.subset((device_id,)), corpus, config, tcn_config, run_dir)


# Encoder training

def train_encoder(
    registry: DeviceRegistry,
    corpus: Corpus,
    config: TrainConfig,
    encoder_config: Optional[EncoderConfig] = None,
    run_dir: Optional[str] = None,
) -> EncoderTrainResult:
    """
    Minimize NT-Xent over contrastive batches of config.batch_size pairs.

    The held-out batch is scored in train mode (batch statistics) without
    touching the running statistics.
    """
    model = enc.init_encoder(encoder_config or EncoderConfig(), derive_seed(config.seed, INIT_STREAM))
    model.training = True
    state = AdamState(lr=config.lr)
    spec = BatchSpec(
        kind="contrastive",
        batch_size=config.batch_size,
        duration_s=config.clip_seconds,
        workers=config.workers,
        prefetch=config.prefetch,
    )
    heldout = make_batch(spec, derive_seed(config.seed, VALIDATION_STREAM), 0, corpus, registry)
    assert isinstance(heldout, ContrastiveBatch)

    def heldout_loss() -> float:
        emb = enc.encoder_forward(model, heldout.views, train=True, update_running=False).embeddings
        return enc.nt_xent(emb, heldout.pair_index, config.temperature)

    initial = heldout_loss()
    log = [LossLogRow(step=0, epoch=0, train_loss=initial, val_loss=initial)]
    total_steps = config.epochs * config.steps_per_epoch
    epoch_losses: List[float] = []
    batches = batch_stream(spec, derive_seed(config.seed, BATCH_STREAM), corpus, registry, n_batches=total_steps)
    for step, batch in enumerate(batches, start=1):
        assert isinstance(batch, ContrastiveBatch)
        out = enc.encoder_forward(model, batch.views, train=True)
        loss, d_emb = enc.nt_xent_grad(out.embeddings, batch.pair_index, config.temperature)
        if not np.isfinite(loss):
            raise DivergenceError(f"NT-Xent became {loss} at step {step}")
        grads = backward("encoder", model, out.cache, d_emb)
        clip_grad_norm(grads, config.grad_clip)
        adam_step(model.params, grads, state)
        model.bump()
        epoch_losses.append(loss)
        if step % config.steps_per_epoch == 0:
            row = LossLogRow(step=step, epoch=step // config.steps_per_epoch, train_loss=float(np.mean(epoch_losses)), val_loss=heldout_loss())
            log.append(row)
            epoch_losses = []
            logger.info(f"Encoder epoch {row.epoch}: train NT-Xent {row.train_loss:.4f}, held-out {row.val_loss:.4f}")

    model.training = False
    result = EncoderTrainResult(model, log, initial, log[-1].val_loss if log[-1].val_loss is not None else initial)
    if run_dir is not None:
        out_dir = Path(run_dir)
        result.checkpoint_path = save_checkpoint(str(out_dir / ENCODER_CHECKPOINT), enc.encoder_to_checkpoint(model))
        write_loss_log(log, out_dir / LOSS_LOG)
    return result


# Enrollment

def _as_tcn(source: TcnSource) -> tcn.TcnModel:
    if isinstance(source, tcn.TcnModel):
        return source
    if isinstance(source, Checkpoint):
        return tcn.tcn_from_checkpoint(source)
    return tcn.tcn_from_checkpoint(load_checkpoint(source, expected_kind=tcn.CHECKPOINT_KIND))


def _stack(pairs: Sequence[ClipPair]) -> Tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise EmptyError("No clean/wet pairs")
    lengths = {len(c) for c, _ in pairs} | {len(w) for _, w in pairs}
    if len(lengths) != 1:
        raise ShapeError(f"Pairs must share one length, got {sorted(lengths)}")
    clean = np.stack([c.samples for c, _ in pairs]).astype(np.float64)
    wet = np.stack([w.samples for _, w in pairs]).astype(np.float64)
    return clean, wet


def select_initial_embedding(
    source: TcnSource,
    pairs: Sequence[ClipPair],
    resolutions: Optional[Sequence[metrics.StftConfig]] = None,
    pre_emph: Optional[float] = None,
) -> int:
    """Embedding row with the lowest total combined loss on the pairs; ties go to the lowest index."""
    model = _as_tcn(source)
    if not pairs:
        raise EmptyError("select_initial_embedding needs at least one pair")
    clean, wet = _stack(pairs)
    totals = []
    for index in range(model.embedding_table.shape[0]):
        pred = tcn.tcn_forward(model, clean, index).output
        totals.append(sum(metrics.combined_loss(w, p, resolutions, pre_emph) for w, p in zip(wet, pred)))
    best = int(np.argmin(totals))
    logger.info(f"Initial embedding: row {best} of {len(totals)} (total loss {totals[best]:.4f})")
    return best


def split_pairs(n: int, split: Tuple[float, float, float], seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded train/val/test index split with at least one validation and one test item."""
    if n < 3:
        raise EmptyError(f"Need at least 3 pairs for a train/val/test split, got {n}")
    order = derive_rng(seed, SPLIT_STREAM).permutation(n)
    n_val = max(1, int(round(split[1] * n)))
    n_test = max(1, int(round(split[2] * n)))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise EmptyError(f"Split of {n} pairs leaves no training data")
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def subset_size(n_train: int, fraction: float) -> int:
    return max(1, int(round(fraction * n_train)))


def _extend_table(model: tcn.TcnModel, row: np.ndarray) -> tcn.TcnModel:
    params = {name: value.copy() for name, value in model.params.items()}
    params[tcn.EMBEDDING] = np.vstack([params[tcn.EMBEDDING], row[None, :]])
    config = model.config.model_copy(update={"n_devices": model.config.n_devices + 1})
    return tcn.TcnModel(config, params)


def _fit_pairs(
    model: tcn.TcnModel,
    device_index: int,
    train: Tuple[np.ndarray, np.ndarray],
    val: Tuple[np.ndarray, np.ndarray],
    settings: EnrollConfig,
    lr: float,
    embedding_only: bool,
    rng: np.random.Generator,
) -> Tuple[List[LossLogRow], int]:
    """
    Optimize on fixed pairs with validation every val_every steps and early stopping.

    With embedding_only, only row device_index of the embedding table moves.
    The best-validation parameters are restored before returning.
    """
    resolutions = metrics.resolutions_from(settings.resolutions)
    clean, wet = train
    n_train = clean.shape[0]
    state = AdamState(lr=lr)
    if embedding_only:
        trainable = {"row": model.params[tcn.EMBEDDING][device_index]}
    else:
        trainable = model.params

    def snapshot() -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in trainable.items()}

    def check(step: int, recent: List[float]) -> LossLogRow:
        v = _evaluate_tcn(model, val[0], val[1], device_index, "combined", resolutions, settings.pre_emphasis)
        train_loss = float(np.mean(recent)) if recent else _evaluate_tcn(model, clean, wet, device_index, "combined", resolutions, settings.pre_emphasis).loss
        return LossLogRow(step=step, train_loss=train_loss, val_loss=v.loss, esr_db=_db(v.esr), mrsl_db=_db(v.mrsl), train_items=n_train)

    log = [check(0, [])]
    best_val, best_step, best = log[0].val_loss, 0, snapshot()
    stagnant = 0
    recent: List[float] = []
    for step in range(1, settings.max_steps + 1):
        idx = rng.choice(n_train, size=settings.batch_size, replace=n_train < settings.batch_size)
        loss, grads = _tcn_loss_and_grads(model, clean[idx], wet[idx], np.full(idx.size, device_index), "combined", resolutions, settings.pre_emphasis)
        if embedding_only:
            grads = {"row": grads[tcn.EMBEDDING][device_index]}
        clip_grad_norm(grads, settings.grad_clip)
        adam_step(trainable, grads, state)
        model.bump()
        recent.append(loss)

        if step % settings.val_every == 0:
            row = check(step, recent)
            log.append(row)
            recent = []
            assert row.val_loss is not None and best_val is not None
            if row.val_loss < best_val:
                best_val, best_step, best = row.val_loss, step, snapshot()
                stagnant = 0
            else:
                stagnant += 1
                if stagnant >= settings.patience:
                    logger.info(f"Early stop at step {step}; best validation {best_val:.4f} at step {best_step}")
                    break

    for name, value in best.items():
        trainable[name][...] = value
    model.bump()
    return log, best_step


def enroll_device(
    source: TcnSource,
    pairs: Sequence[ClipPair],
    config: Optional[EnrollConfig] = None,
    run_dir: Optional[str] = None,
) -> EnrollmentResult:
    """
    Learn an embedding row for an unseen device with all other weights frozen.

    Pairs are split train/val/test (default 90-5-5); the training split is cut
    to data_fraction. The new row starts from the best existing row and is
    appended to the table as index M; the returned model is a copy, the
    source model is left untouched.
    """
    config = config or EnrollConfig()
    foundation = _as_tcn(source)
    resolutions = metrics.resolutions_from(config.resolutions)
    clean, wet = _stack(pairs)
    train_idx, val_idx, test_idx = split_pairs(len(pairs), config.split, config.seed)
    train_idx = train_idx[:subset_size(train_idx.size, config.data_fraction)]
    train_pairs = [pairs[i] for i in train_idx]

    initial_index = select_initial_embedding(foundation, train_pairs, resolutions, config.pre_emphasis)
    start_row = foundation.embedding_table[initial_index].copy()
    model = _extend_table(foundation, start_row)
    new_index = foundation.embedding_table.shape[0]
    test = (clean[test_idx], wet[test_idx])

    untrained_row = np.random.default_rng(derive_seed(config.seed, INIT_STREAM)).normal(0.0, foundation.config.embed_init_std, size=start_row.shape)
    with_untrained = _extend_table(foundation, untrained_row)
    untrained_test = _evaluate_tcn(with_untrained, *test, new_index, "combined", resolutions, config.pre_emphasis).loss
    initial_test = _evaluate_tcn(model, *test, new_index, "combined", resolutions, config.pre_emphasis).loss

    logger.info(f"Enrolling device as row {new_index}: {train_idx.size} train, {val_idx.size} val, {test_idx.size} test pairs")
    log, best_step = _fit_pairs(
        model,
        new_index,
        (clean[train_idx], wet[train_idx]),
        (clean[val_idx], wet[val_idx]),
        config,
        config.lr,
        embedding_only=True,
        rng=derive_rng(config.seed, BATCH_STREAM),
    )
    test_loss = _evaluate_tcn(model, *test, new_index, "combined", resolutions, config.pre_emphasis).loss
    logger.info(f"Enrollment test loss {test_loss:.4f} (start {initial_test:.4f}, untrained {untrained_test:.4f})")

    result = EnrollmentResult(
        model=model,
        device_index=new_index,
        initial_index=initial_index,
        embedding=model.embedding_table[new_index].copy(),
        log=log,
        train_items=int(train_idx.size),
        best_step=best_step,
        test_loss=test_loss,
        initial_test_loss=initial_test,
        untrained_test_loss=untrained_test,
    )
    if run_dir is not None:
        out = Path(run_dir)
        extra = {"enrolled_index": new_index, "initial_index": initial_index, "train_items": result.train_items}
        result.checkpoint_path = save_checkpoint(str(out / ENROLLED_CHECKPOINT), tcn.tcn_to_checkpoint(model, extra))
        write_loss_log(log, out / LOSS_LOG)
    return result


def train_baseline_on_pairs(
    tcn_config: TcnConfig,
    pairs: Sequence[ClipPair],
    config: EnrollConfig,
    lr: float,
) -> Tuple[tcn.TcnModel, float]:
    """One-to-one TCN trained from scratch on the same split and subset enrollment uses; returns (model, test loss)."""
    resolutions = metrics.resolutions_from(config.resolutions)
    clean, wet = _stack(pairs)
    train_idx, val_idx, test_idx = split_pairs(len(pairs), config.split, config.seed)
    train_idx = train_idx[:subset_size(train_idx.size, config.data_fraction)]
    model = tcn.init_tcn(tcn_config.model_copy(update={"n_devices": 1}), derive_seed(config.seed, INIT_STREAM))
    _fit_pairs(
        model,
        0,
        (clean[train_idx], wet[train_idx]),
        (clean[val_idx], wet[val_idx]),
        config,
        lr,
        embedding_only=False,
        rng=derive_rng(config.seed, BATCH_STREAM),
    )
    test = _evaluate_tcn(model, clean[test_idx], wet[test_idx], 0, "combined", resolutions, config.pre_emphasis)
    return model, test.loss


def enrollment_sweep(
    source: TcnSource,
    pairs: Sequence[ClipPair],
    fractions: Sequence[float],
    config: Optional[EnrollConfig] = None,
    baseline_lr: Optional[float] = None,
) -> List[SweepRow]:
    """Enrollment versus a one-to-one baseline at each training-data fraction."""
    config = config or EnrollConfig()
    foundation = _as_tcn(source)
    baseline_lr = baseline_lr if baseline_lr is not None else TrainConfig().lr
    rows = []
    for fraction in fractions:
        settings = config.model_copy(update={"data_fraction": fraction})
        enrolled = enroll_device(foundation, pairs, settings)
        _, baseline = train_baseline_on_pairs(foundation.config, pairs, settings, baseline_lr)
        row = SweepRow(fraction, enrolled.train_items, enrolled.test_loss, baseline)
        logger.info(f"Fraction {fraction}: {row.train_items} pairs, enrolled {row.enrolled_test_loss:.4f}, baseline {row.baseline_test_loss:.4f}")
        rows.append(row)
    return rows


def evaluate_checkpoint(
    source: TcnSource,
    pairs_by_device: Dict[int, Sequence[ClipPair]],
    resolutions: Optional[Sequence[metrics.StftConfig]] = None,
    pre_emph: Optional[float] = None,
) -> LossReport:
    """LossReport of a TCN over clean/wet pairs keyed by embedding row."""
    model = _as_tcn(source)
    scored: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = {}
    for device_id, pairs in sorted(pairs_by_device.items()):
        if not pairs:
            continue
        clean, wet = _stack(pairs)
        pred = tcn.tcn_forward(model, clean, device_id).output
        scored[device_id] = list(zip(wet, pred))
    if not scored:
        raise EmptyError("No pairs to evaluate")
    return metrics.loss_report(scored, resolutions, pre_emph)


def render_labelled_clips(
    registry: DeviceRegistry,
    corpus: Corpus,
    clips_per_device: int,
    duration_s: float,
    seed: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Wet clips rendered through every registry device, with device-id labels."""
    clips, labels = [], []
    for device in registry:
        rng = derive_rng(seed, device.device_id)
        for _ in range(clips_per_device):
            clips.append(render_pair(corpus, registry, device.device_id, duration_s, rng).wet.samples)
            labels.append(device.device_id)
    return np.stack(clips), np.array(labels, dtype=np.int64)


@dataclass
class IdentificationResult:
    """Held-out device-identification scores of an encoder's embeddings."""
    knn_accuracy: float
    mlp_accuracy: Optional[float] = None
    test_items: int = 0
    embeddings_path: Optional[Path] = None


def device_identification(
    model: enc.EncoderModel,
    registry: DeviceRegistry,
    corpus: Corpus,
    clips_per_device: int = 8,
    duration_s: float = 1.0,
    seed: int = 0,
    k: int = 5,
    mlp: bool = True,
    mlp_hidden: int = 100,
    mlp_config: Optional[MlpTrainConfig] = None,
    export_path: Optional[str] = None,
) -> IdentificationResult:
    """
    Score KNN and MLP device classifiers over encoder embeddings on a class-balanced 85-15 split.

    The MLP needs at least two devices and is skipped otherwise. With
    export_path, every rendered clip's embedding is written as JSONL.
    """
    clips, labels = render_labelled_clips(registry, corpus, clips_per_device, duration_s, seed)
    embeddings = enc.embed_clips(model, clips)
    train_idx, test_idx = enc.class_balanced_split(labels, rng=derive_rng(seed, SPLIT_STREAM))
    if test_idx.size == 0:
        raise EmptyError(f"{clips_per_device} clip(s) per device leave nothing to test on")

    predicted = enc.knn_classify(embeddings[train_idx], labels[train_idx], embeddings[test_idx], k=min(k, train_idx.size))
    result = IdentificationResult(enc.accuracy(predicted, labels[test_idx]), test_items=int(test_idx.size))
    logger.info(f"KNN device accuracy {result.knn_accuracy:.3f} over {registry.M} devices (chance {1.0 / registry.M:.3f})")

    if mlp and registry.M >= 2:
        classifier = enc.mlp_train(
            embeddings[train_idx], labels[train_idx], hidden=mlp_hidden, config=mlp_config or MlpTrainConfig(seed=seed)
        )
        result.mlp_accuracy = enc.accuracy(enc.mlp_predict(classifier, embeddings[test_idx]), labels[test_idx])
        logger.info(f"MLP device accuracy {result.mlp_accuracy:.3f} over {registry.M} devices")
    elif mlp:
        logger.warning("MLP device identification needs at least two devices; skipped")

    if export_path:
        clip_ids = [f"device_{int(label):04d}/clip_{i % clips_per_device:05d}" for i, label in enumerate(labels)]
        result.embeddings_path = enc.export_embeddings(export_path, clip_ids, embeddings)
    return result


def knn_device_accuracy(
    model: enc.EncoderModel,
    registry: DeviceRegistry,
    corpus: Corpus,
    clips_per_device: int = 8,
    duration_s: float = 1.0,
    seed: int = 0,
    k: int = 5,
) -> float:
    """Device-identification accuracy of a KNN over encoder embeddings on a held-out 85-15 split."""
    return device_identification(model, registry, corpus, clips_per_device, duration_s, seed, k, mlp=False).knn_accuracy
