"""
Unit tests for LSTM capture inference.
"""

import math

import numpy as np
import pytest

from core.errors import ConditioningError, NonFiniteValueError, ShapeError
from models.audio import AudioClip
from models.device import DeviceModel
from services.lstm_runtime import init_state, measure_realtime_factor, process_block, render, render_device
from utils.toy_data import toy_capture


def _random_model(seed: int, hidden: int = 1, inputs: int = 1, skip: bool = False) -> DeviceModel:
    rng = np.random.default_rng(seed)
    gates = 4 * hidden
    return DeviceModel(
        name=f"random_{seed}",
        input_size=inputs,
        hidden_size=hidden,
        weight_ih=rng.standard_normal((gates, inputs)),
        weight_hh=0.5 * rng.standard_normal((gates, hidden)),
        bias_ih=0.5 * rng.standard_normal(gates),
        bias_hh=0.5 * rng.standard_normal(gates),
        head_weight=rng.standard_normal(hidden),
        head_bias=float(rng.standard_normal()),
        skip=skip,
    )


def _scalar_oracle(model: DeviceModel, x: np.ndarray) -> np.ndarray:
    """Float64 H=1 recurrence written out per gate."""
    w = model.weight_ih.astype(np.float64)[:, 0]
    u = model.weight_hh.astype(np.float64)[:, 0]
    b = model.bias_ih.astype(np.float64) + model.bias_hh.astype(np.float64)
    head = float(model.head_weight[0])

    def sigmoid(z: float) -> float:
        return 1.0 / (1.0 + math.exp(-z))

    h = c = 0.0
    out = []
    for sample in x.astype(np.float64):
        i = sigmoid(w[0] * sample + u[0] * h + b[0])
        f = sigmoid(w[1] * sample + u[1] * h + b[1])
        g = math.tanh(w[2] * sample + u[2] * h + b[2])
        o = sigmoid(w[3] * sample + u[3] * h + b[3])
        c = f * c + i * g
        h = o * math.tanh(c)
        out.append(head * h + model.head_bias + (sample if model.skip else 0.0))
    return np.array(out)


class TestProcessBlock:
    """Test the sample-serial recurrence."""

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_float64_oracle(self, seed: int) -> None:
        """Test agreement with a scalar 64-bit recurrence."""
        model = _random_model(seed, skip=bool(seed % 2))
        x = (0.5 * np.random.default_rng(seed + 1000).standard_normal(256)).astype(np.float32)
        out = process_block(model, init_state(model), x)
        np.testing.assert_allclose(out, _scalar_oracle(model, x), rtol=1e-5, atol=2e-5)

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("block", [1, 7, 64, 4096])
    def test_block_invariance(self, seed: int, block: int) -> None:
        """Test that any block split gives bit-identical output."""
        model = _random_model(100 + seed, hidden=8)
        x = (0.3 * np.random.default_rng(seed).standard_normal(2000)).astype(np.float32)
        whole = process_block(model, init_state(model), x)
        state = init_state(model)
        parts = [process_block(model, state, x[s:s + block]) for s in range(0, x.size, block)]
        np.testing.assert_array_equal(np.concatenate(parts), whole)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(10))
    def test_block_invariance_one_second(self, seed: int) -> None:
        """Test one second at 48 kHz in blocks of 1, 64 and 4096 samples."""
        model = _random_model(200 + seed, hidden=8)
        x = (0.3 * np.random.default_rng(seed).standard_normal(48000)).astype(np.float32)
        whole = process_block(model, init_state(model), x)
        for block in (1, 64, 4096):
            state = init_state(model)
            parts = [process_block(model, state, x[s:s + block]) for s in range(0, x.size, block)]
            np.testing.assert_array_equal(np.concatenate(parts), whole)

    def test_block_invariance_conditioned(self) -> None:
        """Test block invariance with a conditioning input."""
        model = _random_model(11, hidden=4, inputs=2)
        x = (0.3 * np.random.default_rng(1).standard_normal(500)).astype(np.float32)
        whole = process_block(model, init_state(model), x, cond=0.25)
        state = init_state(model)
        parts = [process_block(model, state, x[s:s + 64], cond=0.25) for s in range(0, x.size, 64)]
        np.testing.assert_array_equal(np.concatenate(parts), whole)

    def test_state_is_carried(self) -> None:
        """Test that the state object holds the final (h, c)."""
        model = _random_model(2, hidden=3)
        state = init_state(model)
        process_block(model, state, np.ones(10, dtype=np.float32))
        assert np.any(state.h != 0.0)
        assert state.h.dtype == np.float32

    def test_zero_weights_output_head_bias(self) -> None:
        """Test that an all-zero capture outputs its head bias."""
        model = DeviceModel("zero", 1, 2, np.zeros((8, 1)), np.zeros((8, 2)), np.zeros(8), np.zeros(8), np.zeros(2), 0.25, False)
        out = process_block(model, init_state(model), np.linspace(-1, 1, 16, dtype=np.float32))
        np.testing.assert_array_equal(out, np.full(16, 0.25, dtype=np.float32))

    def test_skip_identity(self) -> None:
        """Test that a zero-head skip capture reproduces its input exactly."""
        model = DeviceModel("id", 1, 1, np.ones((4, 1)), np.zeros((4, 1)), np.zeros(4), np.zeros(4), np.zeros(1), 0.0, True)
        x = np.random.default_rng(4).uniform(-1, 1, 300).astype(np.float32)
        np.testing.assert_array_equal(process_block(model, init_state(model), x), x)

    def test_conditioning_errors(self) -> None:
        """Test conditioning arity checks."""
        plain = _random_model(0)
        conditioned = _random_model(0, inputs=2)
        x = np.zeros(4, dtype=np.float32)
        with pytest.raises(ConditioningError):
            process_block(plain, init_state(plain), x, cond=0.5)
        with pytest.raises(ConditioningError):
            process_block(conditioned, init_state(conditioned), x)

    def test_bad_input(self) -> None:
        """Test empty and non-finite input blocks."""
        model = _random_model(0)
        with pytest.raises(ShapeError):
            process_block(model, init_state(model), np.zeros(0, dtype=np.float32))
        with pytest.raises(NonFiniteValueError):
            process_block(model, init_state(model), np.array([0.0, np.inf], dtype=np.float32))


class TestRender:
    """Test whole-clip rendering helpers."""

    def test_render_is_stateless(self) -> None:
        """Test that rendering twice gives the same clip."""
        model = _random_model(8, hidden=4)
        clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 400), 8000)
        a, b = render(model, clip), render(model, clip)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert len(a) == len(clip) and a.sample_rate == 8000

    def test_conditioning_changes_output(self) -> None:
        """Test that the extreme conditioning values give different devices."""
        model = toy_capture("cond", 2.0, conditioned=True)
        clip = AudioClip(np.linspace(-0.5, 0.5, 200), 8000)
        low, high = render(model, clip, 0.0), render(model, clip, 1.0)
        assert not np.array_equal(low.samples, high.samples)

    def test_warmup(self) -> None:
        """Test that warmup drops the leading samples."""
        model = _random_model(3)
        clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 100), 8000)
        full = render(model, clip)
        trimmed = render(model, clip, warmup_samples=10)
        np.testing.assert_array_equal(trimmed.samples, full.samples[10:])
        with pytest.raises(ShapeError):
            render(model, clip, warmup_samples=100)

    def test_render_device_uses_conditioning(self, toy_registry) -> None:
        """Test rendering through a registry device."""
        device = toy_registry.device(0)
        clip = AudioClip(np.linspace(-0.5, 0.5, 50), 8000)
        np.testing.assert_array_equal(render_device(device, clip).samples, render(device.model, clip).samples)

    def test_realtime_factor_positive(self) -> None:
        """Test the throughput measurement."""
        assert measure_realtime_factor(_random_model(0, hidden=8), sample_rate=8000, seconds=0.05) > 0


if __name__ == "__main__":
    pytest.main([__file__])
