"""
Unit tests for the effects encoder, NT-Xent and the downstream classifiers.
"""

import json
import math

import numpy as np
import pytest

from core.errors import CacheError, DegenerateLabelsError, DomainError, EmptyError, PairingError, ShapeError
from models.schemas import EncoderConfig, MlpTrainConfig
from services.effects_encoder import (
    accuracy,
    class_balanced_split,
    embed_clips,
    encoder_backward,
    encoder_forward,
    encoder_from_checkpoint,
    encoder_param_count,
    encoder_to_checkpoint,
    export_embeddings,
    init_encoder,
    init_mlp,
    knn_classify,
    mlp_param_count,
    mlp_predict,
    mlp_train,
    nt_xent,
    nt_xent_grad,
)


def adjacent_pairs(n_views: int) -> np.ndarray:
    """Partner index for views laid out as (0, 1), (2, 3), ..."""
    return np.arange(n_views) ^ 1


class TestEncoder:
    """Test the convolutional encoder."""

    def test_default_param_count(self) -> None:
        """Test the six-block default configuration."""
        assert encoder_param_count(init_encoder(EncoderConfig(), seed=0)) == 106528

    def test_embedding_shape(self, tiny_encoder_config, rng) -> None:
        """Test (B, T) -> (B, E)."""
        model = init_encoder(tiny_encoder_config, seed=0)
        out = encoder_forward(model, rng.standard_normal((3, 64)), train=False)
        assert out.embeddings.shape == (3, 8)
        assert out.cache is None

    def test_short_clip(self, tiny_encoder_config) -> None:
        """Test that clips shorter than the downsampling factor are refused."""
        model = init_encoder(tiny_encoder_config, seed=0)
        assert model.min_length == 8
        with pytest.raises(ShapeError):
            encoder_forward(model, np.zeros((2, 7)))

    def test_running_statistics(self, tiny_encoder_config, rng) -> None:
        """Test which modes touch the batch-norm buffers."""
        model = init_encoder(tiny_encoder_config, seed=0)
        clips = rng.standard_normal((4, 64)) + 1.0
        before = {k: v.copy() for k, v in model.buffers.items()}
        encoder_forward(model, clips, train=False)
        encoder_forward(model, clips, train=True, update_running=False)
        for name, value in model.buffers.items():
            np.testing.assert_array_equal(value, before[name])
        encoder_forward(model, clips, train=True)
        assert any(not np.array_equal(v, before[k]) for k, v in model.buffers.items())

    def test_backward_shapes_and_stale_cache(self, tiny_encoder_config, rng) -> None:
        """Test gradient coverage and cache versioning."""
        model = init_encoder(tiny_encoder_config, seed=0)
        out = encoder_forward(model, rng.standard_normal((4, 32)), train=True)
        grads, d_clips = encoder_backward(model, out.cache, np.ones((4, 8)))
        assert set(grads) == set(model.params)
        assert d_clips.shape == (4, 32)
        model.bump()
        with pytest.raises(CacheError):
            encoder_backward(model, out.cache, np.ones((4, 8)))

    def test_embed_clips_batches(self, tiny_encoder_config, rng) -> None:
        """Test that batching does not change eval embeddings."""
        model = init_encoder(tiny_encoder_config, seed=0)
        clips = rng.standard_normal((5, 32))
        np.testing.assert_allclose(embed_clips(model, clips, batch_size=2), encoder_forward(model, clips, train=False).embeddings)
        with pytest.raises(EmptyError):
            embed_clips(model, np.zeros((0, 32)))

    def test_checkpoint(self, tiny_encoder_config, rng) -> None:
        """Test round trip including running statistics."""
        model = init_encoder(tiny_encoder_config, seed=0)
        encoder_forward(model, rng.standard_normal((4, 32)), train=True)
        restored = encoder_from_checkpoint(encoder_to_checkpoint(model))
        for name, value in model.buffers.items():
            np.testing.assert_allclose(restored.buffers[name], value, rtol=1e-6)
        clips = rng.standard_normal((2, 32))
        np.testing.assert_allclose(embed_clips(restored, clips), embed_clips(model, clips), atol=1e-5)

        wrong = encoder_to_checkpoint(model)
        wrong.config["channels"] = [4, 8, 16]
        with pytest.raises(ShapeError):
            encoder_from_checkpoint(wrong)


class TestNtXent:
    """Test the contrastive loss."""

    def test_single_pair_is_zero(self, rng) -> None:
        """Test that two views leave only the partner in the denominator."""
        assert nt_xent(rng.standard_normal((2, 8)), adjacent_pairs(2)) == pytest.approx(0.0, abs=1e-12)

    def test_identical_views(self) -> None:
        """Test 64 identical pairs give log(127)."""
        z = np.ones((128, 4))
        assert nt_xent(z, adjacent_pairs(128)) == pytest.approx(math.log(127.0))

    def test_separated_pairs_are_low(self) -> None:
        """Test that orthogonal pairs beat identical views."""
        z = np.repeat(np.eye(4), 2, axis=0)
        assert nt_xent(z, adjacent_pairs(8)) < nt_xent(np.ones((8, 4)), adjacent_pairs(8))

    def test_gradient(self, rng) -> None:
        """Test the analytic gradient against central differences."""
        z = rng.standard_normal((6, 3))
        pairs = adjacent_pairs(6)
        _, grad = nt_xent_grad(z, pairs)
        numeric = np.zeros_like(z)
        for i in np.ndindex(z.shape):
            plus, minus = z.copy(), z.copy()
            plus[i] += 1e-6
            minus[i] -= 1e-6
            numeric[i] = (nt_xent(plus, pairs) - nt_xent(minus, pairs)) / 2e-6
        np.testing.assert_allclose(grad, numeric, atol=1e-6)

    def test_errors(self, rng) -> None:
        """Test bad pairings, zero embeddings and temperature."""
        z = rng.standard_normal((4, 3))
        with pytest.raises(PairingError):
            nt_xent(z[:3], np.array([1, 0, 2]))
        with pytest.raises(PairingError):
            nt_xent(z, np.array([0, 1, 2, 3]))
        with pytest.raises(PairingError):
            nt_xent(z, np.array([1, 2, 3, 0]))
        with pytest.raises(DomainError):
            nt_xent(np.zeros((2, 3)), adjacent_pairs(2))
        with pytest.raises(DomainError):
            nt_xent(z, adjacent_pairs(4), temperature=0.0)


class TestKnn:
    """Test nearest-neighbour classification."""

    def test_majority(self) -> None:
        """Test clear majorities."""
        ref = np.array([[1.0, 0.0], [0.9, 0.1], [0.95, 0.05], [0.0, 1.0], [0.1, 0.9]])
        labels = ["a", "a", "a", "b", "b"]
        predicted = knn_classify(ref, labels, np.array([[1.0, 0.02], [0.05, 1.0]]), k=3)
        assert predicted.tolist() == ["a", "b"]

    def test_tie_goes_to_nearest(self) -> None:
        """Test that a tied vote picks the label of the closest member."""
        ref = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert knn_classify(ref, [3, 7], np.array([[0.2, 1.0]]), k=2).tolist() == [7]
        assert knn_classify(ref, [3, 7], np.array([[1.0, 0.2]]), k=2).tolist() == [3]

    def test_errors(self) -> None:
        """Test empty references and out-of-range k."""
        with pytest.raises(EmptyError):
            knn_classify(np.zeros((0, 2)), [], np.ones((1, 2)))
        with pytest.raises(DomainError):
            knn_classify(np.eye(2), [0, 1], np.ones((1, 2)), k=3)


class TestMlp:
    """Test the downstream classifier."""

    def test_param_count(self) -> None:
        """Test the closed form against initialized tensors."""
        model = init_mlp(64, 100, np.arange(13), seed=0)
        assert mlp_param_count(64, 100, 13) == 7813
        assert sum(v.size for v in model.params.values()) == 7813

    def test_learns_clusters(self, rng) -> None:
        """Test that separable clusters are classified perfectly."""
        centres = np.eye(3) * 4.0
        labels = np.repeat(np.array(["x", "y", "z"]), 10)
        embeddings = np.repeat(centres, 10, axis=0) + 0.3 * rng.standard_normal((30, 3))
        model = mlp_train(embeddings, labels, hidden=16, config=MlpTrainConfig(epochs=200, lr=1e-2))
        assert accuracy(mlp_predict(model, embeddings), labels) == 1.0

    def test_degenerate_labels(self, rng) -> None:
        """Test that one class is refused."""
        with pytest.raises(DegenerateLabelsError):
            mlp_train(rng.standard_normal((4, 3)), [1, 1, 1, 1])
        with pytest.raises(ShapeError):
            mlp_train(rng.standard_normal((4, 3)), [1, 2])


class TestEvaluationHelpers:
    """Test splits, accuracy and export."""

    def test_class_balanced_split(self) -> None:
        """Test per-class hold-out and full coverage."""
        labels = np.array([0] * 10 + [1] * 10 + [2])
        train, test = class_balanced_split(labels, 0.2, np.random.default_rng(5))
        assert np.intersect1d(train, test).size == 0
        assert sorted(np.concatenate([train, test]).tolist()) == list(range(21))
        assert np.bincount(labels[test], minlength=3).tolist() == [2, 2, 0]
        with pytest.raises(DomainError):
            class_balanced_split(labels, 1.0)

    def test_accuracy(self) -> None:
        """Test accuracy values and errors."""
        assert accuracy([1, 2, 3, 4], [1, 2, 0, 4]) == 0.75
        with pytest.raises(EmptyError):
            accuracy([], [])
        with pytest.raises(ShapeError):
            accuracy([1], [1, 2])

    def test_export(self, tmp_path) -> None:
        """Test one JSON row per clip."""
        path = export_embeddings(str(tmp_path / "emb.jsonl"), ["c0", "c1"], np.eye(2))
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert rows[1] == {"clip_id": "c1", "embedding": [0.0, 1.0]}


if __name__ == "__main__":
    pytest.main([__file__])
