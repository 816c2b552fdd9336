"""
Online data augmentation: rendered clean/wet pairs, contrastive batches, batch
streams and exported supervised datasets.

Every random choice goes through an explicit Generator. A rendered pair draws
one seed from the caller's generator and derives all of its own choices from
that seed, so a recorded (source, offset, seed) provenance is enough to replay
it.
"""

import itertools
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from core.errors import BatchSpecError, CorpusError, ParseError, SchemaError, ShapeError
from core.seeding import derive_rng, derive_seed, draw_seed
from models.audio import AudioClip
from models.device import DeviceRegistry
from models.schemas import BatchSpec, ManifestRecord
from services.lstm_runtime import render_device
from services.render_pool import RenderPool
from services.signal_io import Corpus, draw_excerpt, read_wav, write_wav

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
MAX_VIEW_ATTEMPTS = 64

ClipPair = Tuple[AudioClip, AudioClip]


@dataclass(frozen=True)
class Provenance:
    """Where a rendered clip came from."""
    source: str
    offset: int
    seed: int


@dataclass(frozen=True, eq=False)
class RenderedPair:
    clean: AudioClip
    wet: AudioClip
    device_id: int
    provenance: Provenance


@dataclass(frozen=True, eq=False)
class ContrastiveBatch:
    """2N views; view i and view i + N are the two renders of one device."""
    views: np.ndarray  # (2N, T) float32
    pair_index: np.ndarray  # view -> partner view
    device_ids: np.ndarray  # per view
    provenance: Tuple[Provenance, ...]

    @property
    def n_pairs(self) -> int:
        return self.views.shape[0] // 2


@dataclass(frozen=True, eq=False)
class PairedBatch:
    """N clean/wet training pairs with their device ids."""
    clean: np.ndarray  # (N, T) float32
    wet: np.ndarray  # (N, T) float32
    device_ids: np.ndarray
    provenance: Tuple[Provenance, ...]


Batch = Union[ContrastiveBatch, PairedBatch]


def render_pair(corpus: Corpus, registry: DeviceRegistry, device_id: int, duration_s: float, rng: np.random.Generator) -> RenderedPair:
    """Sample one clean excerpt and render it through a registry device."""
    device = registry.device(device_id)
    seed = draw_seed(rng)
    n = corpus.samples_for(duration_s)
    source, offset = draw_excerpt(corpus, n, np.random.default_rng(seed))
    clean = corpus.excerpt(source, offset, n)
    wet = render_device(device, clean)
    return RenderedPair(clean, wet, device.device_id, Provenance(source, offset, seed))


def replay_pair(corpus: Corpus, registry: DeviceRegistry, device_id: int, provenance: Provenance, n_samples: int) -> RenderedPair:
    """Re-render a pair from its recorded provenance."""
    clean = corpus.excerpt(provenance.source, provenance.offset, n_samples)
    wet = render_device(registry.device(device_id), clean)
    return RenderedPair(clean, wet, device_id, provenance)


def _device_pool(registry: DeviceRegistry, device_ids: Optional[Sequence[int]]) -> np.ndarray:
    if device_ids is None:
        return np.arange(registry.M)
    pool = np.array(sorted(set(int(d) for d in device_ids)), dtype=np.int64)
    for device_id in pool:
        registry.device(device_id)
    return pool


def make_contrastive_batch(
    corpus: Corpus,
    registry: DeviceRegistry,
    n_pairs: int,
    duration_s: float,
    rng: np.random.Generator,
    device_ids: Optional[Sequence[int]] = None,
) -> ContrastiveBatch:
    """
    Draw n_pairs distinct devices and render two different clean clips through each.

    The two clips of a pair differ in (source, offset); the second view is
    redrawn until they do.
    """
    pool = _device_pool(registry, device_ids)
    if n_pairs < 1 or n_pairs > pool.size:
        raise BatchSpecError(f"n_pairs must be in [1, {pool.size}], got {n_pairs}")

    chosen = rng.choice(pool, size=n_pairs, replace=False)
    first: List[RenderedPair] = []
    second: List[RenderedPair] = []
    for device_id in chosen:
        a = render_pair(corpus, registry, int(device_id), duration_s, rng)
        for _ in range(MAX_VIEW_ATTEMPTS):
            b = render_pair(corpus, registry, int(device_id), duration_s, rng)
            if (b.provenance.source, b.provenance.offset) != (a.provenance.source, a.provenance.offset):
                break
        else:
            raise CorpusError("Corpus too small to draw two different clips for a positive pair")
        first.append(a)
        second.append(b)

    views = first + second
    n = n_pairs
    pair_index = np.concatenate([np.arange(n, 2 * n), np.arange(0, n)])
    return ContrastiveBatch(
        views=np.stack([v.wet.samples for v in views]),
        pair_index=pair_index,
        device_ids=np.array([v.device_id for v in views], dtype=np.int64),
        provenance=tuple(v.provenance for v in views),
    )


def paired_batch(
    corpus: Corpus,
    registry: DeviceRegistry,
    batch_size: int,
    duration_s: float,
    rng: np.random.Generator,
    device_ids: Optional[Sequence[int]] = None,
) -> PairedBatch:
    """N clean/wet pairs; devices drawn uniformly with replacement."""
    if batch_size < 1:
        raise BatchSpecError(f"batch_size must be positive, got {batch_size}")
    pool = _device_pool(registry, device_ids)
    picks = pool[rng.integers(pool.size, size=batch_size)]
    pairs = [render_pair(corpus, registry, int(d), duration_s, rng) for d in picks]
    return PairedBatch(
        clean=np.stack([p.clean.samples for p in pairs]),
        wet=np.stack([p.wet.samples for p in pairs]),
        device_ids=np.array([p.device_id for p in pairs], dtype=np.int64),
        provenance=tuple(p.provenance for p in pairs),
    )


def make_batch(spec: BatchSpec, global_seed: int, index: int, corpus: Corpus, registry: DeviceRegistry) -> Batch:
    """Batch `index` of a stream; a pure function of (spec, global_seed, index)."""
    rng = derive_rng(global_seed, index)
    if spec.kind == "contrastive":
        return make_contrastive_batch(corpus, registry, spec.batch_size, spec.duration_s, rng, spec.device_ids)
    return paired_batch(corpus, registry, spec.batch_size, spec.duration_s, rng, spec.device_ids)


def batch_stream(
    spec: BatchSpec,
    global_seed: int,
    corpus: Corpus,
    registry: DeviceRegistry,
    start: int = 0,
    n_batches: Optional[int] = None,
) -> Iterator[Batch]:
    """
    Yield batches start, start+1, ... rendered ahead by a worker pool.

    The sequence is identical for any worker count.
    """
    if spec.kind == "contrastive":
        limit = len(spec.device_ids) if spec.device_ids is not None else registry.M
        if spec.batch_size > limit:
            raise BatchSpecError(f"Contrastive batch of {spec.batch_size} pairs needs at least that many devices, have {limit}")
    indices = itertools.count(start) if n_batches is None else range(start, start + n_batches)
    with RenderPool("batches", spec.workers, spec.prefetch) as pool:
        yield from pool.ordered_map(lambda k: make_batch(spec, global_seed, k, corpus, registry), indices)


# Supervised datasets

def clip_relpath(device_id: int, clip_index: int) -> str:
    return f"device_{device_id:04d}/clip_{clip_index:05d}.wav"


def make_supervised_dataset(
    corpus: Corpus,
    registry: DeviceRegistry,
    device_ids: Sequence[int],
    clips_per_device: int,
    duration_s: float,
    out_dir: str,
    seed: int,
    workers: int = 1,
) -> List[ManifestRecord]:
    """
    Render clips_per_device wet clips per device into out_dir with a JSONL manifest.

    Clip (device, j) uses seed derive_seed(seed, device, j), so the dataset is
    reproducible from the arguments alone. On any failure the clips written
    so far and the partial manifest are removed.
    """
    if clips_per_device < 1:
        raise BatchSpecError(f"clips_per_device must be positive, got {clips_per_device}")
    devices = [registry.device(d) for d in device_ids]
    n = corpus.samples_for(duration_s)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(device, j) for device in devices for j in range(clips_per_device)]
    written: List[Path] = []

    def render_job(k: int) -> ManifestRecord:
        device, j = jobs[k]
        clip_seed = derive_seed(seed, device.device_id, j)
        source, offset = draw_excerpt(corpus, n, np.random.default_rng(clip_seed))
        wet = render_device(device, corpus.excerpt(source, offset, n))
        relpath = clip_relpath(device.device_id, j)
        target = root / relpath
        written.append(target)
        write_wav(wet, str(target), "float32")
        return ManifestRecord(
            clip_path=relpath,
            source_path=source,
            source_offset_samples=offset,
            duration_samples=n,
            device_id=device.device_id,
            model_name=device.model.name,
            conditioning_value=device.conditioning_value,
            seed=clip_seed,
        )

    manifest = root / MANIFEST_NAME
    partial = root / (MANIFEST_NAME + ".partial")
    records: List[ManifestRecord] = []
    try:
        with RenderPool("dataset", workers) as pool, open(partial, "w") as f:
            for record in pool.ordered_map(render_job, range(len(jobs))):
                f.write(record.model_dump_json() + "\n")
                records.append(record)
        os.replace(partial, manifest)
    except BaseException as e:
        logger.error(f"Dataset export to {root} failed after {len(records)} clips: {e}")
        for path in written + [partial]:
            path.unlink(missing_ok=True)
        raise

    logger.info(f"Wrote {len(records)} clips for {len(devices)} devices to {root}")
    return records


def read_manifest(path: str) -> List[ManifestRecord]:
    records = []
    with open(path, "r") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord.model_validate_json(line))
            except ValidationError as e:
                raise ParseError(f"{path}:{line_no}: invalid manifest record: {e}") from e
    return records


def replay_record(record: ManifestRecord, corpus: Corpus, registry: DeviceRegistry) -> AudioClip:
    """Re-render the wet clip a manifest record describes."""
    device = registry.device(record.device_id)
    if device.model.name != record.model_name or device.conditioning_value != record.conditioning_value:
        raise SchemaError(
            f"Registry device {record.device_id} is {device.label}, manifest expects "
            f"{record.model_name} at {record.conditioning_value}"
        )
    clean = corpus.excerpt(record.source_path, record.source_offset_samples, record.duration_samples)
    return render_device(device, clean)


def load_manifest_pairs(dataset_dir: str, corpus: Corpus) -> Dict[int, List[ClipPair]]:
    """Clean/wet pairs of an exported dataset grouped by device id."""
    root = Path(dataset_dir)
    pairs: Dict[int, List[ClipPair]] = {}
    for record in read_manifest(str(root / MANIFEST_NAME)):
        clean = corpus.excerpt(record.source_path, record.source_offset_samples, record.duration_samples)
        wet = read_wav(str(root / record.clip_path))
        if len(wet) != len(clean):
            raise ShapeError(f"{record.clip_path} has {len(wet)} samples, manifest says {len(clean)}")
        pairs.setdefault(record.device_id, []).append((clean, wet))
    return pairs


def load_pair_directory(directory: str, segment_s: float) -> List[ClipPair]:
    """
    Clean/wet recordings of one device cut into equal-length pairs.

    Expects clean/ and wet/ subdirectories with matching file names; each
    recording is split into non-overlapping segments, dropping the tail.
    """
    root = Path(directory)
    clean_dir, wet_dir = root / "clean", root / "wet"
    if not clean_dir.is_dir() or not wet_dir.is_dir():
        raise CorpusError(f"{directory} needs clean/ and wet/ subdirectories")
    names = sorted(p.name for p in clean_dir.iterdir() if p.suffix.lower() == ".wav")
    if not names:
        raise CorpusError(f"No WAV files in {clean_dir}")

    pairs: List[ClipPair] = []
    for name in names:
        clean = read_wav(str(clean_dir / name))
        wet = read_wav(str(wet_dir / name))
        if len(clean) != len(wet) or clean.sample_rate != wet.sample_rate:
            raise ShapeError(f"{name}: clean and wet recordings differ in length or rate")
        n = int(round(segment_s * clean.sample_rate))
        if n < 1:
            raise ShapeError(f"Segment of {segment_s} s is shorter than one sample")
        for start in range(0, len(clean) - n + 1, n):
            pairs.append((
                AudioClip(clean.samples[start:start + n], clean.sample_rate),
                AudioClip(wet.samples[start:start + n], wet.sample_rate),
            ))
    logger.info(f"Loaded {len(pairs)} pairs of {segment_s} s from {directory}")
    return pairs


def write_pair_directory(pairs: Sequence[ClipPair], directory: str) -> Path:
    """Write pairs as clean/ and wet/ recordings readable by load_pair_directory."""
    root = Path(directory)
    for k, (clean, wet) in enumerate(pairs):
        write_wav(clean, str(root / "clean" / f"take_{k:05d}.wav"))
        write_wav(wet, str(root / "wet" / f"take_{k:05d}.wav"))
    return root

