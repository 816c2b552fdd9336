"""
Integration tests for embedding-only enrollment, data sweeps and checkpoint evaluation.
"""

import numpy as np
import pytest

from core.checkpoint import load_checkpoint
from core.errors import EmptyError, ShapeError
from models.audio import AudioClip
from models.schemas import EnrollConfig
from services import metrics
from services.tcn_film import CHECKPOINT_KIND, EMBEDDING, TcnModel, init_tcn, tcn_forward, tcn_to_checkpoint
from services.trainer import (
    ENROLLED_CHECKPOINT,
    enroll_device,
    enrollment_sweep,
    evaluate_checkpoint,
    select_initial_embedding,
    split_pairs,
    subset_size,
)

PAIR_SAMPLES = 512


def render_pairs(model: TcnModel, row: np.ndarray, n: int, seed: int):
    """Clean/wet pairs whose wet side is the model driven by an arbitrary embedding row."""
    rng = np.random.default_rng(seed)
    single_row = TcnModel(model.config.model_copy(update={"n_devices": 1}), {**model.params, EMBEDDING: row[None, :]})
    pairs = []
    for _ in range(n):
        clean = (0.5 * rng.standard_normal(PAIR_SAMPLES)).astype(np.float32)
        wet = tcn_forward(single_row, clean, 0).output.astype(np.float32)
        pairs.append((AudioClip(clean, 8000), AudioClip(wet, 8000)))
    return pairs


@pytest.fixture
def foundation(tiny_tcn_config) -> TcnModel:
    model = init_tcn(tiny_tcn_config, seed=11)
    model.params[EMBEDDING] *= 10.0
    return model


@pytest.fixture
def enroll_config(small_resolution_specs) -> EnrollConfig:
    return EnrollConfig(
        lr=2e-2,
        max_steps=120,
        batch_size=4,
        val_every=10,
        patience=4,
        split=(0.6, 0.2, 0.2),
        resolutions=small_resolution_specs,
    )


class TestInitialEmbedding:
    """Test selection of the starting row."""

    def test_self_identification(self, foundation, small_resolutions) -> None:
        """Test that pairs rendered by a row select that row."""
        for device in range(foundation.embedding_table.shape[0]):
            pairs = render_pairs(foundation, foundation.embedding_table[device], 3, seed=device)
            assert select_initial_embedding(foundation, pairs, small_resolutions) == device

    def test_checkpoint_source(self, foundation, small_resolutions) -> None:
        """Test that a checkpoint works as the source."""
        pairs = render_pairs(foundation, foundation.embedding_table[1], 2, seed=0)
        assert select_initial_embedding(tcn_to_checkpoint(foundation), pairs, small_resolutions) == 1

    def test_errors(self, foundation) -> None:
        """Test empty and ragged pair lists."""
        with pytest.raises(EmptyError):
            select_initial_embedding(foundation, [])
        ragged = [(AudioClip(np.ones(256, np.float32), 8000), AudioClip(np.ones(255, np.float32), 8000))]
        with pytest.raises(ShapeError):
            select_initial_embedding(foundation, ragged)


class TestSplits:
    """Test enrollment data splits."""

    def test_default_split_sizes(self) -> None:
        """Test at least one validation and one test item."""
        train, val, test = split_pairs(10, (0.9, 0.05, 0.05), seed=0)
        assert (train.size, val.size, test.size) == (8, 1, 1)
        assert sorted(np.concatenate([train, val, test]).tolist()) == list(range(10))

    def test_split_is_seeded(self) -> None:
        """Test reproducibility of the permutation."""
        a = split_pairs(20, (0.6, 0.2, 0.2), seed=4)
        b = split_pairs(20, (0.6, 0.2, 0.2), seed=4)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_too_few_pairs(self) -> None:
        """Test that fewer than three pairs cannot be split."""
        with pytest.raises(EmptyError):
            split_pairs(2, (0.9, 0.05, 0.05), seed=0)

    def test_subset_size(self) -> None:
        """Test rounding with a floor of one."""
        assert subset_size(100, 0.05) == 5
        assert subset_size(8, 0.01) == 1
        assert subset_size(8, 1.0) == 8


class TestEnrollment:
    """Test embedding-only enrollment."""

    def test_weights_frozen(self, tmp_path, foundation, enroll_config) -> None:
        """Test that only the new row differs from the foundation."""
        before = {name: value.copy() for name, value in foundation.params.items()}
        hidden = foundation.embedding_table[0] + 0.5 * (foundation.embedding_table[0] - foundation.embedding_table[1])
        result = enroll_device(foundation, render_pairs(foundation, hidden, 15, seed=3), enroll_config, run_dir=str(tmp_path))

        for name, value in before.items():
            np.testing.assert_array_equal(foundation.params[name], value)
            if name != EMBEDDING:
                np.testing.assert_array_equal(result.model.params[name], value)
        m = before[EMBEDDING].shape[0]
        assert result.device_index == m
        np.testing.assert_array_equal(result.model.embedding_table[:m], before[EMBEDDING])
        np.testing.assert_array_equal(result.embedding, result.model.embedding_table[m])

        checkpoint = load_checkpoint(str(tmp_path / ENROLLED_CHECKPOINT), CHECKPOINT_KIND)
        assert checkpoint.extra["enrolled_index"] == m
        assert checkpoint.tensors[EMBEDDING].shape == (m + 1, foundation.config.embed_dim)

    def test_learns_unseen_device(self, foundation, enroll_config) -> None:
        """Test that the learned row beats its starting point and a random row."""
        hidden = foundation.embedding_table[0] + 0.5 * (foundation.embedding_table[0] - foundation.embedding_table[1])
        result = enroll_device(foundation, render_pairs(foundation, hidden, 15, seed=3), enroll_config)
        assert result.train_items == 9
        assert result.test_loss < result.initial_test_loss
        assert result.test_loss < result.untrained_test_loss
        assert result.best_step in [row.step for row in result.log]

    def test_known_device_within_tolerance(self, foundation, enroll_config) -> None:
        """Test that re-enrolling a known device stays within 2 dB of the foundation."""
        pairs = render_pairs(foundation, foundation.embedding_table[2], 15, seed=5)
        result = enroll_device(foundation, pairs, enroll_config)
        assert result.initial_index == 2
        _, _, test_idx = split_pairs(len(pairs), enroll_config.split, enroll_config.seed)
        resolutions = metrics.resolutions_from(enroll_config.resolutions)
        report = evaluate_checkpoint(foundation, {2: [pairs[i] for i in test_idx]}, resolutions)
        foundation_loss = report.per_device[2].esr + report.per_device[2].mrsl
        assert metrics.to_db(result.test_loss) <= metrics.to_db(foundation_loss) + 2.0

    def test_low_fraction(self, foundation, enroll_config) -> None:
        """Test that a tiny fraction still trains on one pair."""
        pairs = render_pairs(foundation, foundation.embedding_table[3], 10, seed=6)
        result = enroll_device(foundation, pairs, enroll_config.model_copy(update={"data_fraction": 0.01, "max_steps": 20}))
        assert result.train_items == 1
        assert np.isfinite(result.test_loss)


class TestSweepAndEvaluation:
    """Test data sweeps and checkpoint evaluation."""

    def test_sweep_rows(self, foundation, enroll_config) -> None:
        """Test one row per fraction with growing training sets."""
        pairs = render_pairs(foundation, foundation.embedding_table[1], 10, seed=8)
        config = enroll_config.model_copy(update={"max_steps": 20})
        rows = enrollment_sweep(foundation, pairs, [0.2, 1.0], config, baseline_lr=1e-2)
        assert [row.fraction for row in rows] == [0.2, 1.0]
        assert rows[0].train_items < rows[1].train_items
        assert all(np.isfinite(row.baseline_test_loss) and row.baseline_test_loss > 0 for row in rows)

    def test_evaluate_checkpoint(self, tmp_path, foundation, small_resolutions) -> None:
        """Test per-device reports from a saved model."""
        pairs = {d: render_pairs(foundation, foundation.embedding_table[d], 2, seed=d) for d in (0, 3)}
        report = evaluate_checkpoint(tcn_to_checkpoint(foundation), pairs, small_resolutions)
        assert set(report.per_device) == {0, 3}
        assert report.per_device[0].esr < 1e-6
        with pytest.raises(EmptyError):
            evaluate_checkpoint(foundation, {0: []})


if __name__ == "__main__":
    pytest.main([__file__])
