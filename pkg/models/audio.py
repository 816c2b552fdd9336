"""
Audio buffer type.
"""

from dataclasses import dataclass

import numpy as np

from core.errors import NonFiniteValueError, ShapeError


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono float32 sample buffer with its sample rate."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ShapeError(f"AudioClip must be mono (1-D), got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ShapeError(f"Sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise NonFiniteValueError("AudioClip contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate
