"""
Shared fixtures: tiny vocabularies, float64 toy models and synthetic data.
"""
import numpy as np
import pytest

from captrfuse.config import TrainConfig
from captrfuse.core.tensor import precision
from captrfuse.nn.captioner import CaptionTransformer
from captrfuse.nn.classifier import FusionClassifier, FusionMode
from captrfuse.models.samples import SENTIMENT_LABELS
from captrfuse.services.synthetic import SyntheticSpec, generate_synthetic
from captrfuse.text.vocabulary import Vocabulary

WORDS = [
    "negative", "neutral", "positive",
    "red", "green", "blue",
    "alice", "bob", "carol",
    "i", "we", "they", "saw", "met", "watched", "today", "yesterday", "again",
]


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture
def vocab() -> Vocabulary:
    return Vocabulary.build(WORDS)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TrainConfig(
        d_model=8,
        n_heads=2,
        n_layers=1,
        max_length=16,
        attention_dropout=0.0,
        pooler_dropout=0.0,
        caption_d_model=8,
        caption_heads=2,
        backbone_channels=[4, 4, 4],
        image_size=16,
        caption_length=6,
        batch_size=4,
        caption_batch_size=4,
        epochs=1,
        caption_epochs=1,
        dtype="float64",
    )


@pytest.fixture
def image() -> np.ndarray:
    return np.random.default_rng(3).uniform(size=(3, 16, 16))


@pytest.fixture
def captioner(f64, tiny_config, vocab) -> CaptionTransformer:
    return CaptionTransformer.from_config(tiny_config, vocab, np.random.default_rng(0)).eval()


@pytest.fixture
def make_classifier(f64, tiny_config, vocab):
    def build(mode: FusionMode, labels=SENTIMENT_LABELS) -> FusionClassifier:
        return FusionClassifier.from_config(tiny_config, vocab, mode, labels, np.random.default_rng(1)).eval()

    return build


@pytest.fixture(scope="session")
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(n_caption_pairs=8, n_train=12, n_dev=6, n_test=6)


@pytest.fixture(scope="session")
def synthetic_data(small_spec):
    return generate_synthetic(7, small_spec)
