"""
Capture and registry domain types.

A DeviceModel is one crowdsourced single-layer LSTM capture. Conditioned
captures (input_size 2) are expanded into several SyntheticDevices, one per
conditioning value, and the DeviceRegistry orders them deterministically.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np

from core.errors import DeviceIndexError, NonFiniteValueError, SchemaError

GATES = ("input", "forget", "cell", "output")


def _frozen(array: Any, shape: Tuple[int, ...], label: str) -> np.ndarray:
    out = np.array(array, dtype=np.float32)
    if out.shape != shape:
        raise SchemaError(f"{label} has shape {out.shape}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise NonFiniteValueError(f"{label} contains non-finite values")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DeviceModel:
    """One LSTM capture. Weight rows are in gate order input, forget, cell, output."""
    name: str
    input_size: int
    hidden_size: int
    weight_ih: np.ndarray  # (4H, input_size)
    weight_hh: np.ndarray  # (4H, H)
    bias_ih: np.ndarray    # (4H,)
    bias_hh: np.ndarray    # (4H,)
    head_weight: np.ndarray  # (H,)
    head_bias: float
    skip: bool
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        hidden = self.hidden_size
        if not isinstance(hidden, (int, np.integer)) or hidden <= 0:
            raise SchemaError(f"hidden_size must be a positive integer, got {hidden}")
        if self.input_size not in (1, 2):
            raise SchemaError(f"input_size must be 1 or 2, got {self.input_size}")
        gates = 4 * hidden
        object.__setattr__(self, "weight_ih", _frozen(self.weight_ih, (gates, self.input_size), "weight_ih"))
        object.__setattr__(self, "weight_hh", _frozen(self.weight_hh, (gates, hidden), "weight_hh"))
        object.__setattr__(self, "bias_ih", _frozen(self.bias_ih, (gates,), "bias_ih"))
        object.__setattr__(self, "bias_hh", _frozen(self.bias_hh, (gates,), "bias_hh"))
        object.__setattr__(self, "head_weight", _frozen(self.head_weight, (hidden,), "head_weight"))
        head_bias = float(np.float32(self.head_bias))
        if not np.isfinite(head_bias):
            raise NonFiniteValueError("head_bias is not finite")
        object.__setattr__(self, "head_bias", head_bias)
        object.__setattr__(self, "skip", bool(self.skip))

    @property
    def conditioned(self) -> bool:
        return self.input_size == 2

    def parameters(self) -> Dict[str, np.ndarray]:
        """All learnable tensors by name (head bias as a 1-element array)."""
        return {
            "weight_ih": self.weight_ih,
            "weight_hh": self.weight_hh,
            "bias_ih": self.bias_ih,
            "bias_hh": self.bias_hh,
            "head_weight": self.head_weight,
            "head_bias": np.array([self.head_bias], dtype=np.float32),
        }


@dataclass(frozen=True, eq=False)
class SyntheticDevice:
    """One (capture, conditioning value) pair treated as a distinct effect."""
    device_id: int
    model: DeviceModel
    conditioning_value: Optional[float] = None
    source_path: str = ""

    def __post_init__(self) -> None:
        if self.model.conditioned and self.conditioning_value is None:
            raise SchemaError(f"Device {self.device_id}: conditioned model {self.model.name} needs a conditioning value")
        if not self.model.conditioned and self.conditioning_value is not None:
            raise SchemaError(f"Device {self.device_id}: unconditioned model {self.model.name} cannot take a conditioning value")
        if self.conditioning_value is not None and not 0.0 <= self.conditioning_value <= 1.0:
            raise SchemaError(f"Device {self.device_id}: conditioning value {self.conditioning_value} outside [0, 1]")

    @property
    def label(self) -> str:
        if self.conditioning_value is None:
            return self.model.name
        return f"{self.model.name}@{self.conditioning_value:g}"


@dataclass(frozen=True, eq=False)
class DeviceRegistry:
    """Ordered, immutable collection of synthetic devices."""
    devices: Tuple[SyntheticDevice, ...]
    failures: Tuple[Tuple[str, str], ...] = ()  # (path, reason) of skipped capture files
    cond_points: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "failures", tuple(self.failures))
        for position, device in enumerate(self.devices):
            if device.device_id != position:
                raise SchemaError(f"Device at position {position} has id {device.device_id}")

    @property
    def M(self) -> int:
        return len(self.devices)

    def __len__(self) -> int:
        return len(self.devices)

    def __iter__(self) -> Iterator[SyntheticDevice]:
        return iter(self.devices)

    def __getitem__(self, device_id: int) -> SyntheticDevice:
        return self.device(device_id)

    def device(self, device_id: int) -> SyntheticDevice:
        if not 0 <= int(device_id) < len(self.devices):
            raise DeviceIndexError(f"Device id {device_id} outside registry of {len(self.devices)} devices")
        return self.devices[int(device_id)]

    def subset(self, device_ids: Tuple[int, ...]) -> "DeviceRegistry":
        """New registry holding the given devices, renumbered from 0 in the given order."""
        picked = []
        for position, device_id in enumerate(device_ids):
            source = self.device(device_id)
            picked.append(SyntheticDevice(position, source.model, source.conditioning_value, source.source_path))
        return DeviceRegistry(tuple(picked), (), self.cond_points)
