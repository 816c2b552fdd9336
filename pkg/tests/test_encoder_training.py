"""
Integration tests for contrastive encoder training and device identification.
"""

import numpy as np
import pytest

from core.checkpoint import load_checkpoint
from core.errors import EmptyError
from models.schemas import EncoderConfig, MlpTrainConfig, TrainConfig
from services.effects_encoder import CHECKPOINT_KIND, embed_clips, encoder_from_checkpoint, init_encoder
from services.model_zoo import registry_from_models
from services.trainer import (
    ENCODER_CHECKPOINT,
    LOSS_LOG,
    device_identification,
    knn_device_accuracy,
    read_loss_log,
    render_labelled_clips,
    train_encoder,
)
from utils.toy_data import toy_captures


@pytest.fixture
def encoder_train() -> TrainConfig:
    return TrainConfig(batch_size=4, clip_seconds=0.25, epochs=2, steps_per_epoch=3, lr=1e-3, seed=2)


class TestEncoderTraining:
    """Test the NT-Xent training loop."""

    def test_run_outputs(self, tmp_path, toy_registry, toy_clean_corpus, encoder_train, tiny_encoder_config) -> None:
        """Test the log, eval mode and saved checkpoint."""
        result = train_encoder(toy_registry, toy_clean_corpus, encoder_train, tiny_encoder_config, run_dir=str(tmp_path))
        assert len(result.log) == encoder_train.epochs + 1
        assert result.log[0].val_loss == result.initial_heldout
        assert result.final_heldout == result.log[-1].val_loss
        assert all(np.isfinite(row.train_loss) for row in result.log)
        assert not result.model.training

        restored = encoder_from_checkpoint(load_checkpoint(str(tmp_path / ENCODER_CHECKPOINT), CHECKPOINT_KIND))
        clips, _ = render_labelled_clips(toy_registry, toy_clean_corpus, 1, 0.25, seed=0)
        np.testing.assert_allclose(embed_clips(restored, clips), embed_clips(result.model, clips), atol=1e-4)
        assert read_loss_log(tmp_path / LOSS_LOG) == result.log

    def test_deterministic(self, toy_registry, toy_clean_corpus, encoder_train, tiny_encoder_config) -> None:
        """Test equal weights for equal seeds across worker counts."""
        a = train_encoder(toy_registry, toy_clean_corpus, encoder_train, tiny_encoder_config)
        b = train_encoder(toy_registry, toy_clean_corpus, encoder_train.model_copy(update={"workers": 2}), tiny_encoder_config)
        for name, value in a.model.params.items():
            np.testing.assert_array_equal(value, b.model.params[name])


class TestDeviceIdentification:
    """Test labelled rendering and KNN scoring."""

    def test_labelled_clips(self, toy_registry, toy_clean_corpus) -> None:
        """Test clip count, labels and reproducibility."""
        clips, labels = render_labelled_clips(toy_registry, toy_clean_corpus, 3, 0.25, seed=1)
        assert clips.shape == (toy_registry.M * 3, 2000)
        assert labels.tolist() == [d for d in range(toy_registry.M) for _ in range(3)]
        again, _ = render_labelled_clips(toy_registry, toy_clean_corpus, 3, 0.25, seed=1)
        np.testing.assert_array_equal(clips, again)

    def test_knn_accuracy_range(self, toy_registry, toy_clean_corpus, encoder_train, tiny_encoder_config) -> None:
        """Test that accuracy is a proportion."""
        model = train_encoder(toy_registry, toy_clean_corpus, encoder_train, tiny_encoder_config).model
        score = knn_device_accuracy(model, toy_registry, toy_clean_corpus, clips_per_device=7, duration_s=0.25)
        assert 0.0 <= score <= 1.0

    def test_identification_scores(self, tmp_path, toy_registry, toy_clean_corpus, tiny_encoder_config) -> None:
        """Test KNN and MLP scores on the same split and the embedding export."""
        model = init_encoder(tiny_encoder_config, seed=0)
        export = tmp_path / "emb.jsonl"
        scores = device_identification(
            model, toy_registry, toy_clean_corpus, clips_per_device=7, duration_s=0.25,
            mlp_config=MlpTrainConfig(epochs=50), export_path=str(export),
        )
        assert scores.test_items == toy_registry.M
        assert 0.0 <= scores.knn_accuracy <= 1.0
        assert 0.0 <= scores.mlp_accuracy <= 1.0
        assert scores.embeddings_path == export
        assert len(export.read_text().splitlines()) == toy_registry.M * 7
        assert scores.knn_accuracy == knn_device_accuracy(model, toy_registry, toy_clean_corpus, 7, 0.25)

    def test_identification_edge_cases(self, toy_registry, toy_clean_corpus, tiny_encoder_config) -> None:
        """Test the single-device MLP skip and a split with nothing held out."""
        model = init_encoder(tiny_encoder_config, seed=0)
        single = toy_registry.subset((1,))
        scores = device_identification(model, single, toy_clean_corpus, clips_per_device=7, duration_s=0.25)
        assert scores.knn_accuracy == 1.0
        assert scores.mlp_accuracy is None
        with pytest.raises(EmptyError):
            device_identification(model, toy_registry, toy_clean_corpus, clips_per_device=1, duration_s=0.25)


@pytest.mark.slow
class TestEncoderAcceptance:
    """Longer runs on an eight-device toy zoo."""

    def test_heldout_loss_and_identification(self, toy_clean_corpus) -> None:
        """Test that 2000 steps lower held-out NT-Xent and identify devices at three times chance."""
        registry = registry_from_models([(f"{m.name}.json", m) for m in toy_captures(8)])
        assert registry.M == 8
        config = TrainConfig(batch_size=8, clip_seconds=0.5, epochs=20, steps_per_epoch=100, lr=1e-3)
        encoder = EncoderConfig(channels=(8, 8, 16, 16), kernel=5, stride=2, embed_dim=16)
        result = train_encoder(registry, toy_clean_corpus, config, encoder)
        assert config.epochs * config.steps_per_epoch == 2000
        assert result.final_heldout < result.initial_heldout

        scores = device_identification(result.model, registry, toy_clean_corpus, clips_per_device=20, duration_s=0.5)
        assert scores.knn_accuracy >= 3.0 / registry.M
        assert scores.mlp_accuracy is not None


if __name__ == "__main__":
    pytest.main([__file__])
