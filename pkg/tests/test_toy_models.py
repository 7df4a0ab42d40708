"""Tests for the toy Markov models and model-pair generation."""

import numpy as np
import pytest

from src.errors import ParseError, UnreachableDivergence
from src.toy_models import ModelPair, ModelPairBuilder, ModelPairConfig, ToyLM, make_model_pair


def test_conditional_lookup_and_fallback():
    tables = np.array([[0.9, 0.1], [0.2, 0.8]])
    model = ToyLM(1, 2, tables, marginal=np.array([0.5, 0.5]))
    assert model.conditional([0])[0] == pytest.approx(0.9)
    assert model.conditional([0, 1])[1] == pytest.approx(0.8)
    assert model.conditional([])[0] == pytest.approx(0.5)


def test_order_two_context_keys():
    model = ToyLM(2, 3, np.full((9, 3), 1 / 3))
    assert model.context_index([1, 2]) == 5
    assert model.context_tokens(5) == (1, 2)
    assert list(model.contexts())[5] == (1, 2)


def test_generate_is_seeded():
    pair = make_model_pair(ModelPairConfig(vocab_size=5, order=1, seed=11))
    a = pair.target.generate([0], 50, np.random.default_rng(3))
    b = pair.target.generate([0], 50, np.random.default_rng(3))
    assert a == b
    assert len(a) == 50


def test_from_token_stream_counts():
    tokens = [0, 1, 0, 1, 0, 1, 0]
    model = ToyLM.from_token_stream(tokens, order=1, vocab_size=2, smoothing=1.0)
    # after 0: three transitions to 1 plus smoothing
    assert model.conditional([0])[1] == pytest.approx(4 / 5)


def test_zero_divergence_copies_target():
    pair = make_model_pair(ModelPairConfig(vocab_size=6, order=1, divergence=0.0, seed=2))
    assert np.array_equal(pair.draft.tables, pair.target.tables)


def test_full_divergence_gives_disjoint_supports():
    pair = make_model_pair(ModelPairConfig(vocab_size=4, order=1, divergence=1.0, seed=2))
    overlap = (pair.draft.tables > 0) & (pair.target.tables > 0)
    assert not overlap.any()


def test_requested_divergence_is_reached():
    pair = make_model_pair(ModelPairConfig(vocab_size=10, order=2, divergence=0.3, seed=5))
    assert pair.target.n_contexts == 100
    assert 0.25 <= pair.mean_divergence() <= 0.35


def test_config_validation():
    with pytest.raises(UnreachableDivergence):
        ModelPairConfig(divergence=1.5)
    with pytest.raises(ValueError):
        ModelPairConfig(temperature=0.0)
    with pytest.raises(ValueError):
        ModelPairConfig(top_p=0.0)


def test_top_p_truncates_target_rows():
    pair = make_model_pair(ModelPairConfig(vocab_size=8, divergence=0.3, seed=6, top_p=0.6))
    kept = (pair.target.tables > 0).sum(axis=1)
    assert (kept < 8).all()
    assert pair.target.tables.sum(axis=1) == pytest.approx(np.ones(8))
    assert pair.config.top_p == 0.6
    assert 0.25 <= pair.mean_divergence() <= 0.35


def test_sharpening_lowers_entropy():
    cold = ModelPairBuilder(ModelPairConfig(vocab_size=8, temperature=0.2, seed=1))
    warm = ModelPairBuilder(ModelPairConfig(vocab_size=8, temperature=1.0, seed=1))
    assert cold.context_statistics()['target_entropy'].mean() < \
        warm.context_statistics()['target_entropy'].mean()


def test_pair_bundle_round_trip(tmp_path, small_pair):
    path = tmp_path / 'pair.json'
    small_pair.save(path)
    loaded = ModelPair.load(path)
    assert np.array_equal(loaded.draft.tables, small_pair.draft.tables)
    assert np.array_equal(loaded.target.tables, small_pair.target.tables)
    assert loaded.config == small_pair.config


def test_pair_bundle_errors(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ParseError):
        ModelPair.load(path)
    path.write_text('{not json')
    with pytest.raises(ParseError):
        ModelPair.load(path)
