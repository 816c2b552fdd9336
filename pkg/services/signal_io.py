"""
WAV reading and writing plus the clean-audio corpus sampler.

Supported encodings are 16-bit PCM, 24-bit PCM and 32-bit float. Integer PCM
is scaled by 1/32768 (16-bit) or 1/8388608 (24-bit); multichannel files are
averaged to mono.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import soundfile as sf

from core.errors import CorpusError, EmptyClipError, FormatError, ParseError, SampleRateError, ShapeError
from models.audio import AudioClip

logger = logging.getLogger(__name__)

SUBTYPES = {"pcm16": "PCM_16", "pcm24": "PCM_24", "float32": "FLOAT"}
_READABLE = set(SUBTYPES.values())


def _check_riff(path: Path) -> None:
    """Walk the RIFF chunk list; a chunk running past end of file means truncation."""
    size = path.stat().st_size
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12:
            raise ParseError(f"{path} is too short to be a WAV file")
        if head[:4] in (b"RIFX", b"RF64"):
            raise FormatError(f"{path}: {head[:4].decode()} containers are not supported")
        if head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise ParseError(f"{path} is not a RIFF/WAVE file")

        pos = 12
        has_data = False
        while pos + 8 <= size:
            f.seek(pos)
            chunk_id, chunk_size = struct.unpack("<4sI", f.read(8))
            if pos + 8 + chunk_size > size:
                raise ParseError(f"{path} is truncated: chunk {chunk_id!r} runs past end of file")
            has_data = has_data or chunk_id == b"data"
            pos += 8 + chunk_size + (chunk_size & 1)
        if not has_data:
            raise ParseError(f"{path} has no data chunk")


def read_wav(path: str) -> AudioClip:
    """Read a WAV file as a mono float32 clip."""
    target = Path(path)
    _check_riff(target)
    try:
        info = sf.info(str(target))
        if info.subtype not in _READABLE:
            raise FormatError(f"{target}: unsupported encoding {info.subtype}")
        if info.subtype == "FLOAT":
            frames, rate = sf.read(str(target), dtype="float32", always_2d=True)
            data = frames.astype(np.float64)
        else:
            frames, rate = sf.read(str(target), dtype="int32", always_2d=True)
            data = frames.astype(np.float64) / 2.0**31
    except RuntimeError as e:
        raise ParseError(f"Cannot decode {target}: {e}") from e

    if data.shape[0] != info.frames:
        raise ParseError(f"{target} is truncated: read {data.shape[0]} of {info.frames} frames")
    mono = data[:, 0] if data.shape[1] == 1 else data.mean(axis=1)
    return AudioClip(mono.astype(np.float32), int(rate))


def write_wav(clip: AudioClip, path: str, encoding: str = "float32") -> int:
    """
    Write a clip; returns the number of samples hard-clipped.

    Integer encodings clip samples outside [-1, 1] to the extreme codes.
    """
    if len(clip) == 0:
        raise EmptyClipError("Cannot write an empty clip")
    if encoding not in SUBTYPES:
        raise FormatError(f"Unknown encoding {encoding}; expected one of {sorted(SUBTYPES)}")

    x = clip.samples.astype(np.float64)
    clipped = 0
    if encoding == "float32":
        data = clip.samples
    else:
        clipped = int(np.count_nonzero(np.abs(x) > 1.0))
        bits = 16 if encoding == "pcm16" else 24
        full = 2.0 ** (bits - 1)
        codes = np.clip(np.round(x * full), -full, full - 1)
        if encoding == "pcm16":
            data = codes.astype(np.int16)
        else:
            data = codes.astype(np.int32) << 8

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(target), data, clip.sample_rate, subtype=SUBTYPES[encoding], format="WAV")
    if clipped:
        logger.warning(f"Clipped {clipped} samples writing {target} as {encoding}")
    return clipped


class Corpus:
    """
    Read-only index over clean source recordings at a single sample rate.

    Sources are kept in sorted name order; lookups never mutate the corpus, so
    one instance can be shared by render workers.
    """

    def __init__(self, sources: Sequence[Tuple[str, AudioClip]], sample_rate: int):
        if not sources:
            raise CorpusError("Corpus has no source recordings")
        self.sample_rate = int(sample_rate)
        self._names: List[str] = []
        self._audio: Dict[str, np.ndarray] = {}
        for name, clip in sorted(sources, key=lambda item: item[0]):
            if clip.sample_rate != self.sample_rate:
                raise SampleRateError(
                    f"Source {name} is {clip.sample_rate} Hz, corpus expects {self.sample_rate} Hz"
                )
            if name in self._audio:
                raise CorpusError(f"Duplicate corpus source {name}")
            samples = clip.samples.copy()
            samples.setflags(write=False)
            self._names.append(name)
            self._audio[name] = samples
        self._lengths = np.array([self._audio[n].shape[0] for n in self._names], dtype=np.int64)

    @classmethod
    def from_directory(cls, directory: str, sample_rate: Optional[int] = None) -> "Corpus":
        """Load every .wav under a directory (recursively); names are relative paths."""
        root = Path(directory)
        paths = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".wav")
        if not paths:
            raise CorpusError(f"No WAV files under {directory}")
        sources = [(p.relative_to(root).as_posix(), read_wav(str(p))) for p in paths]
        rate = sample_rate if sample_rate is not None else sources[0][1].sample_rate
        corpus = cls(sources, rate)
        logger.info(f"Loaded corpus of {len(paths)} files ({corpus.total_seconds:.1f} s) from {directory}")
        return corpus

    @classmethod
    def from_clips(cls, clips: Dict[str, AudioClip]) -> "Corpus":
        if not clips:
            raise CorpusError("Corpus has no source recordings")
        rate = next(iter(clips.values())).sample_rate
        return cls(list(clips.items()), rate)

    @property
    def sources(self) -> Tuple[str, ...]:
        return tuple(self._names)

    @property
    def total_seconds(self) -> float:
        return float(self._lengths.sum()) / self.sample_rate

    def length(self, source: str) -> int:
        return int(self._source(source).shape[0])

    def _source(self, source: str) -> np.ndarray:
        try:
            return self._audio[source]
        except KeyError as e:
            raise CorpusError(f"Unknown corpus source {source}") from e

    def eligible_offsets(self, n_samples: int) -> np.ndarray:
        """Number of valid start offsets for an excerpt of n_samples, per source."""
        return np.maximum(self._lengths - n_samples + 1, 0)

    def excerpt(self, source: str, offset: int, n_samples: int) -> AudioClip:
        audio = self._source(source)
        if offset < 0 or offset + n_samples > audio.shape[0]:
            raise CorpusError(f"Excerpt [{offset}, {offset + n_samples}) outside source {source}")
        return AudioClip(audio[offset:offset + n_samples], self.sample_rate)

    def prefix(self, fraction: float) -> "Corpus":
        """Corpus restricted to the leading fraction of every source."""
        if not 0 < fraction <= 1:
            raise CorpusError(f"Corpus fraction must be in (0, 1], got {fraction}")
        if fraction == 1:
            return self
        sources = []
        for name in self._names:
            audio = self._audio[name]
            keep = max(1, int(np.ceil(fraction * audio.shape[0])))
            sources.append((name, AudioClip(audio[:keep], self.sample_rate)))
        return Corpus(sources, self.sample_rate)

    def samples_for(self, duration_s: float) -> int:
        n = int(round(duration_s * self.sample_rate))
        if n < 1:
            raise ShapeError(f"Duration {duration_s} s is shorter than one sample")
        return n


def draw_excerpt(corpus: Corpus, n_samples: int, rng: np.random.Generator) -> Tuple[str, int]:
    """
    Pick (source, offset) uniformly over all valid excerpt positions.

    Sources are therefore weighted by their number of eligible offsets.
    """
    counts = corpus.eligible_offsets(n_samples)
    total = int(counts.sum())
    if total == 0:
        raise CorpusError(f"No corpus file holds {n_samples} samples")
    k = int(rng.integers(total))
    ends = np.cumsum(counts)
    index = int(np.searchsorted(ends, k, side="right"))
    offset = k - int(ends[index] - counts[index])
    return corpus.sources[index], offset


def sample_clip(corpus: Corpus, duration_s: float, rng: np.random.Generator) -> AudioClip:
    """Random excerpt of duration_s seconds."""
    n = corpus.samples_for(duration_s)
    source, offset = draw_excerpt(corpus, n, rng)
    return corpus.excerpt(source, offset, n)
