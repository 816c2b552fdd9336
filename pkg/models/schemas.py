"""
Pydantic schemas: run configurations, batch specifications and exported records.

Every configuration model forbids unknown keys so a typo in a config file is a
ConfigError instead of a silently ignored setting.
"""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.config import get_config


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Records

class ManifestRecord(StrictModel):
    """One rendered clip of a supervised dataset."""
    clip_path: str
    source_path: str
    source_offset_samples: int = Field(ge=0)
    duration_samples: int = Field(gt=0)
    device_id: int = Field(ge=0)
    model_name: str
    conditioning_value: Optional[float] = None
    seed: int = Field(ge=0)


class LossLogRow(StrictModel):
    """One row of a training or enrollment loss log."""
    step: int
    epoch: Optional[int] = None
    train_loss: float
    val_loss: Optional[float] = None
    esr_db: Optional[float] = None
    mrsl_db: Optional[float] = None
    train_items: Optional[int] = None


class RegistryRow(StrictModel):
    device_id: int
    model_name: str
    model_file: str
    conditioning_value: Optional[float] = None
    param_count: int


# Model configurations

class StftResolution(StrictModel):
    fft_size: int = Field(gt=0)
    hop: int = Field(gt=0)


def default_resolutions() -> List[StftResolution]:
    return [StftResolution(fft_size=n, hop=n // 4) for n in (512, 1024, 2048)]


class TcnConfig(StrictModel):
    """One-to-many TCN hyperparameters. Dilation of layer l in a block is dilation_growth**l."""
    n_blocks: int = Field(2, gt=0)
    layers_per_block: int = Field(8, gt=0)
    channels: int = Field(16, gt=0)
    kernel: int = Field(3, gt=0)
    dilation_growth: int = Field(2, gt=0)
    embed_dim: int = Field(64, gt=0)
    n_devices: int = Field(1, gt=0)
    embed_init_std: float = Field(0.1, gt=0)


class EncoderConfig(StrictModel):
    """Convolutional effects encoder hyperparameters."""
    channels: Tuple[int, ...] = (16, 16, 32, 32, 64, 64)
    kernel: int = Field(5, gt=0)
    stride: int = Field(2, gt=0)
    embed_dim: int = Field(64, gt=0)
    bn_eps: float = Field(1e-5, gt=0)
    bn_momentum: float = Field(0.1, gt=0, le=1)

    @field_validator("channels")
    @classmethod
    def non_decreasing(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("encoder needs at least one block")
        if any(c <= 0 for c in value):
            raise ValueError("channel counts must be positive")
        if any(b < a for a, b in zip(value, value[1:])):
            raise ValueError("channel schedule must be non-decreasing")
        return value


# Training configurations

class TrainConfig(StrictModel):
    """Foundation, one-to-one and encoder training settings."""
    batch_size: int = Field(16, gt=0)
    clip_seconds: float = Field(2.0, gt=0)
    epochs: int = Field(8, gt=0)
    steps_per_epoch: int = Field(100, gt=0)
    seed: int = Field(0, ge=0)
    loss: Literal["combined", "esr", "mrsl"] = "combined"
    data_fraction: float = Field(1.0, gt=0, le=1)
    lr: float = Field(default_factory=lambda: get_config().train.adam_lr, gt=0)
    grad_clip: float = Field(default_factory=lambda: get_config().train.grad_clip_norm, gt=0)
    workers: int = Field(1, ge=1)
    prefetch: int = Field(4, ge=1)
    pre_emphasis: Optional[float] = None
    resolutions: List[StftResolution] = Field(default_factory=default_resolutions)
    temperature: float = Field(0.5, gt=0)


class EnrollConfig(StrictModel):
    """Embedding-only enrollment settings."""
    lr: float = Field(default_factory=lambda: get_config().train.enroll_lr, gt=0)
    max_steps: int = Field(2000, gt=0)
    batch_size: int = Field(4, gt=0)
    val_every: int = Field(default_factory=lambda: get_config().train.val_every, gt=0)
    patience: int = Field(default_factory=lambda: get_config().train.early_stop_patience, gt=0)
    split: Tuple[float, float, float] = (0.9, 0.05, 0.05)
    data_fraction: float = Field(1.0, gt=0, le=1)
    seed: int = Field(0, ge=0)
    grad_clip: float = Field(default_factory=lambda: get_config().train.grad_clip_norm, gt=0)
    pre_emphasis: Optional[float] = None
    resolutions: List[StftResolution] = Field(default_factory=default_resolutions)

    @field_validator("split")
    @classmethod
    def split_sums_to_one(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(v <= 0 for v in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError("split fractions must be positive and sum to 1")
        return value


class MlpTrainConfig(StrictModel):
    """Downstream MLP classifier settings."""
    epochs: int = Field(300, gt=0)
    lr: float = Field(1e-2, gt=0)
    batch_size: Optional[int] = Field(None, gt=0)
    seed: int = Field(0, ge=0)


class BatchSpec(StrictModel):
    """What batch_stream renders: contrastive view pairs or clean/wet training pairs."""
    kind: Literal["contrastive", "paired"]
    batch_size: int = Field(gt=0)
    duration_s: float = Field(gt=0)
    workers: int = Field(1, ge=1)
    prefetch: int = Field(4, ge=1)
    device_ids: Optional[List[int]] = None


# Command run configuration

class AugmentSection(StrictModel):
    device_ids: Optional[List[int]] = None
    n_devices: Optional[int] = Field(None, gt=0)
    clips_per_device: int = Field(1, gt=0)
    duration_s: float = Field(2.0, gt=0)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def one_selection(self) -> "AugmentSection":
        if self.device_ids is not None and self.n_devices is not None:
            raise ValueError("give either device_ids or n_devices, not both")
        return self


class EnrollSection(StrictModel):
    checkpoint: str
    pairs_dir: str
    fractions: List[float] = Field(default_factory=lambda: [0.001, 0.01, 0.1, 1.0])
    settings: EnrollConfig = Field(default_factory=EnrollConfig)


class EvalSection(StrictModel):
    checkpoint: str
    dataset_dir: str


class RunConfig(StrictModel):
    """Top-level configuration file shared by the training and data commands."""
    run_dir: str
    models_dir: Optional[str] = None
    corpus_dir: Optional[str] = None
    sample_rate: int = Field(default_factory=lambda: get_config().render.sample_rate, gt=0)
    cond_points: int = Field(default_factory=lambda: get_config().render.cond_points, ge=1)
    train: TrainConfig = Field(default_factory=TrainConfig)
    tcn: TcnConfig = Field(default_factory=TcnConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    augment: Optional[AugmentSection] = None
    enroll: Optional[EnrollSection] = None
    eval: Optional[EvalSection] = None


# Evaluation reports

class DeviceLoss(StrictModel):
    device_id: int
    n_clips: int
    esr: float
    mrsl: float
    combined: float
    esr_db: Optional[float] = None
    mrsl_db: Optional[float] = None
    combined_db: Optional[float] = None


class QuantileEntry(StrictModel):
    """Device at one nearest-rank percentile of the combined loss."""
    label: str
    percentile: int
    rank: int
    device_id: int
    esr: float
    mrsl: float
    combined: float
    esr_db: Optional[float] = None
    mrsl_db: Optional[float] = None
    combined_db: Optional[float] = None


class LossReport(StrictModel):
    """Test losses over a set of clips, overall and per device. dB fields are 10*log10(linear)."""
    esr: float
    mrsl: float
    esr_db: Optional[float] = None
    mrsl_db: Optional[float] = None
    per_device: Dict[int, DeviceLoss] = Field(default_factory=dict)
    quantiles: List[QuantileEntry] = Field(default_factory=list)
