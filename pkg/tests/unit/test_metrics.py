"""
Unit tests for losses, dB conversion and loss reports.
"""

import json
import math

import numpy as np
import pytest

from core.errors import DegenerateTargetError, DomainError, ShapeError
from services.metrics import (
    DEFAULT_RESOLUTIONS,
    StftConfig,
    combined_loss,
    device_report,
    esr,
    esr_grad,
    export_report,
    from_db,
    loss_report,
    mrsl,
    mrsl_terms,
    pre_emphasis,
    stft_mag,
    to_db,
)


class TestEsr:
    """Test the error-to-signal ratio."""

    def test_closed_forms(self, rng) -> None:
        """Test perfect, silent and sign-flipped predictions."""
        t = rng.standard_normal(256)
        assert esr(t, t) == 0.0
        assert esr(t, np.zeros_like(t)) == 1.0
        assert esr(t, -t) == pytest.approx(4.0)

    def test_zero_target(self) -> None:
        """Test that an all-zero target is degenerate."""
        with pytest.raises(DegenerateTargetError):
            esr(np.zeros(8), np.ones(8))

    def test_shape_mismatch(self) -> None:
        """Test unequal lengths."""
        with pytest.raises(ShapeError):
            esr(np.ones(8), np.ones(9))

    def test_gradient_zero_at_minimum(self, rng) -> None:
        """Test that the gradient vanishes at pred == target."""
        t = rng.standard_normal(32)
        np.testing.assert_array_equal(esr_grad(t, t), np.zeros(32))

    def test_pre_emphasis(self, rng) -> None:
        """Test the pre-emphasis filter and its effect on ESR."""
        x = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(pre_emphasis(x, 0.5), [1.0, 1.5, 2.0])
        t = rng.standard_normal(64)
        assert esr(t, t, pre_emph=0.95) == 0.0
        assert esr(t, np.zeros(64), pre_emph=0.95) == 1.0


class TestStft:
    """Test the STFT magnitude."""

    def test_frame_count_and_bins(self) -> None:
        """Test spectrogram shape without padding."""
        cfg = StftConfig(64, 16)
        assert stft_mag(np.zeros(200), cfg).shape == (cfg.n_frames(200), 33)
        assert cfg.n_frames(200) == 9

    def test_parseval(self, rng) -> None:
        """Test Parseval's identity per frame."""
        cfg = StftConfig(128, 32)
        x = rng.standard_normal(512)
        mag = stft_mag(x, cfg)
        frames = np.lib.stride_tricks.sliding_window_view(x, 128)[::32] * cfg.window
        energy = mag[:, 0] ** 2 + mag[:, -1] ** 2 + 2 * np.sum(mag[:, 1:-1] ** 2, axis=1)
        np.testing.assert_allclose(energy, 128 * np.sum(frames ** 2, axis=1), rtol=1e-4)

    def test_bad_configs(self) -> None:
        """Test invalid FFT sizes, hops and short signals."""
        with pytest.raises(DomainError):
            StftConfig(100, 25)
        with pytest.raises(DomainError):
            StftConfig(64, 0)
        with pytest.raises(ShapeError):
            stft_mag(np.zeros(10), StftConfig(64, 16))

    def test_default_resolutions(self) -> None:
        """Test the three default resolutions."""
        assert [(c.fft_size, c.hop) for c in DEFAULT_RESOLUTIONS] == [(512, 128), (1024, 256), (2048, 512)]


class TestMrsl:
    """Test the multi-resolution spectral loss."""

    def test_identity_is_zero(self, rng, small_resolutions) -> None:
        """Test MRSL(t, t) = 0."""
        t = rng.standard_normal(512)
        assert mrsl(t, t, small_resolutions) == 0.0

    def test_scaling_closed_form(self, rng, small_resolutions) -> None:
        """Test that pred = 2 * target gives 1 + log 2 per resolution."""
        t = rng.standard_normal(1024)
        for sc, log_term in mrsl_terms(t, 2.0 * t, small_resolutions):
            assert sc == pytest.approx(1.0, abs=1e-9)
            assert log_term == pytest.approx(math.log(2.0), abs=1e-6)
        assert mrsl(t, 2.0 * t, small_resolutions) == pytest.approx(1.0 + math.log(2.0), abs=1e-6)

    def test_zero_target_spectrum(self, small_resolutions) -> None:
        """Test that a silent target is degenerate."""
        with pytest.raises(DegenerateTargetError):
            mrsl(np.zeros(256), np.ones(256), small_resolutions)

    def test_combined_is_sum(self, rng, small_resolutions) -> None:
        """Test combined_loss = esr + mrsl."""
        t = rng.standard_normal(512)
        p = t + 0.1 * rng.standard_normal(512)
        assert combined_loss(t, p, small_resolutions) == pytest.approx(esr(t, p) + mrsl(t, p, small_resolutions))


class TestDb:
    """Test decibel conversion."""

    def test_values(self) -> None:
        """Test known conversions."""
        assert to_db(0.01) == pytest.approx(-20.0)
        assert to_db(1.0) == 0.0
        assert from_db(to_db(0.37)) == pytest.approx(0.37)

    def test_domain(self) -> None:
        """Test that non-positive values are rejected."""
        with pytest.raises(DomainError):
            to_db(0.0)
        with pytest.raises(DomainError):
            to_db(-1.0)


class TestReports:
    """Test per-device reports."""

    def test_quantiles(self) -> None:
        """Test nearest-rank selection over eight devices."""
        losses = {d: (0.01 * (d + 1), 0.0) for d in range(8)}
        entries = {e.label: e for e in device_report(losses)}
        assert entries["best"].device_id == 0
        assert entries["p25"].device_id == 1
        assert entries["median"].device_id == 3
        assert entries["p75"].device_id == 5
        assert entries["worst"].device_id == 7
        assert entries["best"].rank == 1

    def test_single_device(self) -> None:
        """Test that one device fills every quantile."""
        entries = device_report({4: (0.1, 0.2)})
        assert {e.device_id for e in entries} == {4}
        assert entries[0].combined == pytest.approx(0.3)

    def test_ties_break_by_id(self) -> None:
        """Test deterministic ordering of equal losses."""
        entries = device_report({3: (0.5, 0.0), 1: (0.5, 0.0)})
        assert entries[0].device_id == 1
        assert entries[-1].device_id == 3

    def test_loss_report_and_export(self, tmp_path, rng, small_resolutions) -> None:
        """Test report aggregation and JSON export."""
        t = rng.standard_normal(256)
        pairs = {0: [(t, t * 0.5)], 2: [(t, t * 0.9), (t, t * 0.8)]}
        report = loss_report(pairs, small_resolutions)
        assert report.per_device[0].esr == pytest.approx(0.25)
        assert report.per_device[2].n_clips == 2
        assert report.esr == pytest.approx((0.25 + 0.01 + 0.04) / 3)
        assert report.esr_db == pytest.approx(to_db(report.esr))
        assert [q.label for q in report.quantiles] == ["best", "p25", "median", "p75", "worst"]

        payload = json.loads(export_report(report, str(tmp_path / "report.json")).read_text())
        assert set(payload["per_device"]) == {"0", "2"}

    def test_empty(self) -> None:
        """Test empty inputs."""
        with pytest.raises(DomainError):
            device_report({})
        with pytest.raises(DomainError):
            loss_report({0: []})


if __name__ == "__main__":
    pytest.main([__file__])
