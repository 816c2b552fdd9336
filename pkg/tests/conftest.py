"""
Shared fixtures: toy captures, toy corpora and small loss/model configurations.
"""

import numpy as np
import pytest

from models.schemas import EncoderConfig, StftResolution, TcnConfig
from services.metrics import StftConfig
from services.model_zoo import registry_from_models
from services.signal_io import Corpus
from utils.toy_data import toy_captures, toy_corpus, write_toy_captures, write_toy_corpus

SAMPLE_RATE = 8000


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def toy_models():
    """Four plain toy captures."""
    return toy_captures(4)


@pytest.fixture
def toy_registry(toy_models):
    return registry_from_models([(f"{m.name}.json", m) for m in toy_models], cond_points=5)


@pytest.fixture
def toy_clean_clips():
    return toy_corpus(n_sources=3, seconds=3.0, sample_rate=SAMPLE_RATE, seed=0)


@pytest.fixture
def toy_clean_corpus(toy_clean_clips) -> Corpus:
    return Corpus.from_clips(toy_clean_clips)


@pytest.fixture
def captures_dir(tmp_path, toy_models):
    directory = tmp_path / "models"
    write_toy_captures(toy_models, str(directory))
    return directory


@pytest.fixture
def corpus_dir(tmp_path, toy_clean_clips):
    directory = tmp_path / "corpus"
    write_toy_corpus(toy_clean_clips, str(directory))
    return directory


@pytest.fixture
def small_resolutions():
    return (StftConfig(64, 16), StftConfig(128, 32))


@pytest.fixture
def small_resolution_specs():
    return [StftResolution(fft_size=64, hop=16), StftResolution(fft_size=128, hop=32)]


@pytest.fixture
def tiny_tcn_config() -> TcnConfig:
    return TcnConfig(n_blocks=1, layers_per_block=3, channels=4, kernel=3, dilation_growth=2, embed_dim=4, n_devices=4)


@pytest.fixture
def tiny_encoder_config() -> EncoderConfig:
    return EncoderConfig(channels=(4, 4, 8), kernel=3, stride=2, embed_dim=8)
