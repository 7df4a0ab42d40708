"""Shared fixtures for the test suite."""

import matplotlib
matplotlib.use('Agg')

import numpy as np
import pytest

from src.toy_models import ModelPairConfig, make_model_pair


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_pair():
    """Vocabulary-4, order-1 pair with moderate divergence."""
    return make_model_pair(ModelPairConfig(vocab_size=4, order=1, divergence=0.3, seed=3))


@pytest.fixture
def pair_file(tmp_path, small_pair):
    path = tmp_path / 'pair.json'
    small_pair.save(path)
    return path
