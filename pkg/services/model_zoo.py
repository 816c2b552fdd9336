"""
Capture file parsing and registry construction.

Capture files use the open-source capture-tool JSON schema:

    {
      "model_data": {"model": "SimpleRNN", "unit_type": "LSTM", "num_layers": 1,
                     "input_size": 1 | 2, "hidden_size": H, "output_size": 1,
                     "skip": 0 | 1, "bias_fl": true, "name": "..."},
      "state_dict": {"rec.weight_ih_l0": [4H x I], "rec.weight_hh_l0": [4H x H],
                     "rec.bias_ih_l0": [4H], "rec.bias_hh_l0": [4H],
                     "lin.weight": [1 x H], "lin.bias": [1]}
    }

Weight rows are in gate order input, forget, cell, output. Arrays may be nested
or flat; they are flattened row-major and checked against the declared sizes.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import get_config
from core.errors import (
    ConfigError,
    EmptyRegistryError,
    NonFiniteValueError,
    ParseError,
    SchemaError,
)
from models.device import DeviceModel, DeviceRegistry, SyntheticDevice
from models.schemas import RegistryRow

logger = logging.getLogger(__name__)

CAPTURE_SUFFIX = ".json"

WEIGHT_IH = "rec.weight_ih_l0"
WEIGHT_HH = "rec.weight_hh_l0"
BIAS_IH = "rec.bias_ih_l0"
BIAS_HH = "rec.bias_hh_l0"
HEAD_WEIGHT = "lin.weight"
HEAD_BIAS = "lin.bias"


def _flat(state: Dict[str, Any], key: str, size: int) -> np.ndarray:
    if key not in state:
        raise SchemaError(f"state_dict is missing {key}")
    try:
        values = np.asarray(state[key], dtype=np.float64).ravel()
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{key} is not a numeric array: {e}") from e
    if values.size != size:
        raise SchemaError(f"{key} has {values.size} values, expected {size}")
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"{key} contains non-finite values")
    return values


def _positive_int(model_data: Dict[str, Any], key: str) -> int:
    value = model_data.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise SchemaError(f"model_data.{key} must be a positive integer, got {value!r}")
    return value


def parse_model_file(raw_bytes: bytes, name: Optional[str] = None) -> DeviceModel:
    """
    Parse capture file bytes into a validated DeviceModel.

    `name` is used when the file carries no name of its own (callers pass the
    file stem).
    """
    try:
        document = json.loads(raw_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"Capture file is not valid JSON text: {e}") from e

    if not isinstance(document, dict):
        raise SchemaError("Capture file must be a JSON object")
    model_data = document.get("model_data")
    state = document.get("state_dict")
    if not isinstance(model_data, dict) or not isinstance(state, dict):
        raise SchemaError("Capture file needs 'model_data' and 'state_dict' objects")

    unit_type = str(model_data.get("unit_type", "LSTM")).upper()
    if unit_type != "LSTM":
        raise SchemaError(f"Unsupported unit type {unit_type}")
    if model_data.get("num_layers", 1) != 1:
        raise SchemaError(f"Only single-layer captures are supported, got {model_data.get('num_layers')}")
    if model_data.get("output_size", 1) != 1:
        raise SchemaError(f"Only mono-output captures are supported, got {model_data.get('output_size')}")

    hidden = _positive_int(model_data, "hidden_size")
    inputs = _positive_int(model_data, "input_size")
    if inputs not in (1, 2):
        raise SchemaError(f"input_size must be 1 or 2, got {inputs}")
    gates = 4 * hidden

    weight_ih = _flat(state, WEIGHT_IH, gates * inputs).reshape(gates, inputs)
    weight_hh = _flat(state, WEIGHT_HH, gates * hidden).reshape(gates, hidden)
    bias_ih = _flat(state, BIAS_IH, gates)
    bias_hh = _flat(state, BIAS_HH, gates)
    head_weight = _flat(state, HEAD_WEIGHT, hidden)
    head_bias = _flat(state, HEAD_BIAS, 1)

    model_name = model_data.get("name") or name or "unnamed"
    return DeviceModel(
        name=str(model_name),
        input_size=inputs,
        hidden_size=hidden,
        weight_ih=weight_ih,
        weight_hh=weight_hh,
        bias_ih=bias_ih,
        bias_hh=bias_hh,
        head_weight=head_weight,
        head_bias=float(head_bias[0]),
        skip=bool(model_data.get("skip", 0)),
        metadata=dict(model_data),
    )


def _as_list(array: np.ndarray) -> List[Any]:
    return np.asarray(array, dtype=np.float64).tolist()


def serialize_model(model: DeviceModel) -> bytes:
    """Encode a DeviceModel in the capture schema. parse_model_file inverts it exactly."""
    model_data = dict(model.metadata)
    model_data.update({
        "model": model_data.get("model", "SimpleRNN"),
        "unit_type": "LSTM",
        "num_layers": 1,
        "input_size": model.input_size,
        "hidden_size": model.hidden_size,
        "output_size": 1,
        "skip": int(model.skip),
        "bias_fl": True,
        "name": model.name,
    })
    document = {
        "model_data": model_data,
        "state_dict": {
            WEIGHT_IH: _as_list(model.weight_ih),
            WEIGHT_HH: _as_list(model.weight_hh),
            BIAS_IH: _as_list(model.bias_ih),
            BIAS_HH: _as_list(model.bias_hh),
            HEAD_WEIGHT: [_as_list(model.head_weight)],
            HEAD_BIAS: [float(model.head_bias)],
        },
    }
    return json.dumps(document).encode("utf-8")


def lstm_param_count(model: DeviceModel) -> int:
    """Learnable parameters: 4H*I + 4H^2 + 8H (two bias vectors) + H + 1 (head)."""
    h, i = model.hidden_size, model.input_size
    return 4 * h * i + 4 * h * h + 8 * h + h + 1


def conditioning_values(cond_points: int) -> List[float]:
    """Linearly spaced values in [0, 1]; a single point sits at 0.5."""
    if cond_points < 1:
        raise ConfigError(f"cond_points must be at least 1, got {cond_points}")
    if cond_points == 1:
        return [0.5]
    return [i / (cond_points - 1) for i in range(cond_points)]


def registry_from_models(
    models: Sequence[Tuple[str, DeviceModel]],
    cond_points: Optional[int] = None,
    failures: Sequence[Tuple[str, str]] = (),
) -> DeviceRegistry:
    """
    Expand (source_path, model) pairs into a registry.

    Ordering is by model name, then source path, then conditioning value.
    """
    cond_points = get_config().render.cond_points if cond_points is None else cond_points
    values = conditioning_values(cond_points)
    if not models:
        raise EmptyRegistryError("No usable capture models")

    devices: List[SyntheticDevice] = []
    for source, model in sorted(models, key=lambda item: (item[1].name, item[0])):
        if model.conditioned:
            for value in values:
                devices.append(SyntheticDevice(len(devices), model, value, source))
        else:
            devices.append(SyntheticDevice(len(devices), model, None, source))
    return DeviceRegistry(tuple(devices), tuple(failures), cond_points)


def _load_capture(path: Path) -> DeviceModel:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ParseError(f"Cannot read {path}: {e}") from e
    return parse_model_file(raw, name=path.stem)


def build_registry(model_dir: str, cond_points: Optional[int] = None, workers: int = 4) -> DeviceRegistry:
    """
    Build the synthetic-device registry from a directory of capture files.

    Files that fail to parse are skipped and listed in registry.failures; the
    build fails only when no file loads.
    """
    cond_points = get_config().render.cond_points if cond_points is None else cond_points
    conditioning_values(cond_points)

    directory = Path(model_dir)
    if not directory.is_dir():
        raise EmptyRegistryError(f"Model directory {model_dir} does not exist")
    paths = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() == CAPTURE_SUFFIX)
    if not paths:
        raise EmptyRegistryError(f"No capture files in {model_dir}")

    def attempt(path: Path) -> Tuple[Path, Optional[DeviceModel], Optional[str]]:
        try:
            return path, _load_capture(path), None
        except (ParseError, SchemaError, NonFiniteValueError) as e:
            return path, None, f"{type(e).__name__}: {e}"

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(attempt, paths))

    models = []
    failures = []
    for path, model, reason in results:
        if model is None:
            logger.warning(f"Skipping capture {path.name}: {reason}")
            failures.append((str(path), reason or "unknown"))
        else:
            models.append((str(path), model))

    if not models:
        raise EmptyRegistryError(f"All {len(paths)} capture files in {model_dir} failed to load")

    registry = registry_from_models(models, cond_points, failures)
    conditioned = sum(1 for _, m in models if m.conditioned)
    logger.info(
        f"Built registry of {registry.M} devices from {len(models)} captures "
        f"({conditioned} conditioned, {len(failures)} skipped)"
    )
    return registry


def registry_rows(registry: DeviceRegistry) -> List[RegistryRow]:
    return [
        RegistryRow(
            device_id=device.device_id,
            model_name=device.model.name,
            model_file=device.source_path,
            conditioning_value=device.conditioning_value,
            param_count=lstm_param_count(device.model),
        )
        for device in registry
    ]


def export_registry(registry: DeviceRegistry, path: str) -> Path:
    """Write the registry manifest (device rows plus skipped files) as JSON."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "cond_points": registry.cond_points,
        "M": registry.M,
        "devices": [row.model_dump() for row in registry_rows(registry)],
        "failures": [{"path": p, "reason": r} for p, r in registry.failures],
    }
    with open(target, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    logger.info(f"Exported registry of {registry.M} devices to {target}")
    return target
