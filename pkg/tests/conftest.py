import numpy as np
import pytest

from moodcap.model import ModelConfig, Parameters, Variant


TINY = dict(regions=4, feature_dim=8, hidden=16, word_dim=10,
            sentiment_dim=6, vocab_size=20, attention_hidden=6,
            dropout_rate=0.0)


def tiny_config(variant=Variant.FULL, **overrides):
    kw = {**TINY, **overrides}
    return ModelConfig(variant=variant, **kw)


def make_params(config, seed=0):
    return Parameters.initialize(config, np.random.default_rng(seed))


def zero_params(config):
    p = make_params(config, seed=0)
    for name in p.trainable:
        p.values[name][:] = 0.0
    return p


def random_features(config, rng):
    return rng.normal(size=(config.regions, config.feature_dim))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
