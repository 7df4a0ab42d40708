"""Tests for categorical distributions and sampling primitives."""

from collections import Counter
from itertools import permutations

import numpy as np
import pytest

from src.categorical import Categorical, CategoricalOps
from src.errors import (
    DegenerateVector,
    EmptySupport,
    InsufficientSupport,
    InvalidDistribution,
    ParseError,
)


def test_categorical_rejects_invalid_vectors():
    with pytest.raises(InvalidDistribution):
        Categorical([0.5, 0.6])
    with pytest.raises(InvalidDistribution):
        Categorical([1.5, -0.5])
    with pytest.raises(InvalidDistribution):
        Categorical([])
    with pytest.raises(InvalidDistribution):
        Categorical([np.nan, 1.0])


def test_categorical_is_read_only():
    dist = Categorical([0.25, 0.75])
    with pytest.raises(ValueError):
        dist.probs[0] = 1.0


def test_normalize():
    assert CategoricalOps.normalize([0.5, 0]) == Categorical([1.0, 0.0])
    assert CategoricalOps.normalize([0.25, 0.25, 0.5]).allclose(Categorical([0.25, 0.25, 0.5]))
    with pytest.raises(DegenerateVector):
        CategoricalOps.normalize([0, 0])


def test_residual():
    assert CategoricalOps.residual(Categorical([1, 0]), Categorical([0.5, 0.5])) == Categorical([1.0, 0.0])
    out = CategoricalOps.residual(Categorical([0.6, 0.3, 0.1]), Categorical([0.2, 0.5, 0.3]))
    assert out.allclose(Categorical([1.0, 0.0, 0.0]))
    with pytest.raises(DegenerateVector):
        CategoricalOps.residual(Categorical([0.6, 0.4]), Categorical([0.6, 0.4]))


def test_residual_support_within_target():
    R = Categorical([0.5, 0.0, 0.5])
    D = Categorical([0.1, 0.8, 0.1])
    out = CategoricalOps.residual(R, D)
    assert out[1] == 0.0


def test_tv_distance():
    assert CategoricalOps.tv_distance(Categorical([1, 0]), Categorical([0.5, 0.5])) == pytest.approx(0.5)
    P = Categorical([0.2, 0.3, 0.5])
    assert CategoricalOps.tv_distance(P, P) == 0.0
    assert CategoricalOps.tv_distance(Categorical([1, 0]), Categorical([0, 1])) == pytest.approx(1.0)


def test_sample_point_masses(rng):
    assert all(CategoricalOps.sample(Categorical([1, 0]), rng) == 0 for _ in range(100))
    assert all(CategoricalOps.sample(Categorical([0, 1]), rng) == 1 for _ in range(100))


def test_sample_frequencies(rng):
    draws = np.array([CategoricalOps.sample(Categorical([0.5, 0.5]), rng) for _ in range(100_000)])
    sigma = np.sqrt(0.25 / draws.size)
    assert abs(draws.mean() - 0.5) < 4 * sigma


def test_sample_without_replacement_point_mass(rng):
    assert CategoricalOps.sample_without_replacement(Categorical([1, 0, 0]), 1, rng) == [0]


def test_sample_without_replacement_uniform_orderings(rng):
    dist = Categorical(np.full(3, 1 / 3))
    trials = 60_000
    counts = Counter(tuple(CategoricalOps.sample_without_replacement(dist, 3, rng))
                     for _ in range(trials))
    sigma = np.sqrt((1 / 6) * (5 / 6) / trials)
    assert set(counts) == set(permutations(range(3)))
    for perm in permutations(range(3)):
        assert abs(counts[perm] / trials - 1 / 6) < 4 * sigma


def test_sample_without_replacement_matches_sequential_draws(rng):
    p = np.array([0.7, 0.2, 0.1])
    dist = Categorical(p)
    trials = 60_000
    counts = Counter(tuple(CategoricalOps.sample_without_replacement(dist, 2, rng))
                     for _ in range(trials))
    for a, b in permutations(range(3), 2):
        expected = p[a] * p[b] / (1 - p[a])
        sigma = np.sqrt(expected * (1 - expected) / trials)
        assert abs(counts[(a, b)] / trials - expected) < 4.5 * sigma
    assert counts[(0, 1)] / trials == pytest.approx(0.7 * 0.2 / 0.3, abs=0.01)


def test_sample_without_replacement_needs_support(rng):
    with pytest.raises(InsufficientSupport):
        CategoricalOps.sample_without_replacement(Categorical([0.5, 0.5, 0.0]), 3, rng)


def test_uniform_over():
    assert CategoricalOps.uniform_over(set(), 4).allclose(Categorical(np.full(4, 0.25)))
    assert CategoricalOps.uniform_over({0}, 2) == Categorical([0.0, 1.0])
    with pytest.raises(EmptySupport):
        CategoricalOps.uniform_over({0, 1, 2}, 3)


def test_draft_order_extends_past_support(rng):
    Q = Categorical([0.6, 0.4, 0.0, 0.0])
    for _ in range(50):
        order = CategoricalOps.draft_order(Q, 4, rng)
        assert sorted(order) == [0, 1, 2, 3]
        assert set(order[:2]) == {0, 1}
    with pytest.raises(InsufficientSupport):
        CategoricalOps.draft_order(Q, 5, rng)


def test_top_k_breaks_ties_by_token_id():
    Q = Categorical([0.3, 0.3, 0.4])
    assert CategoricalOps.top_k(Q, 2) == [2, 0]
    assert CategoricalOps.top_k(Q, 3) == [2, 0, 1]


def test_from_logits_temperature():
    sharp = Categorical.from_logits([1.0, 2.0], temperature=0.1)
    flat = Categorical.from_logits([1.0, 2.0], temperature=10.0)
    assert sharp[1] > 0.99
    assert abs(flat[1] - 0.5) < 0.05
    with pytest.raises(InvalidDistribution):
        Categorical.from_logits([1.0], temperature=0.0)


def test_json_parse_errors():
    assert Categorical.from_json('[0.25, 0.75]') == Categorical([0.25, 0.75])
    with pytest.raises(ParseError):
        Categorical.from_json('{"p": 1}')
    with pytest.raises(ParseError):
        Categorical.from_json('[0.5,')


def test_top_p_keeps_smallest_nucleus():
    P = Categorical([0.1, 0.5, 0.3, 0.1])
    assert CategoricalOps.top_p(P, 0.5) == Categorical.point_mass(1, 4)
    assert CategoricalOps.top_p(P, 0.7).allclose(Categorical([0.0, 0.625, 0.375, 0.0]))
    assert CategoricalOps.top_p(P, 0.8).allclose(Categorical([0.0, 0.625, 0.375, 0.0]))
    assert CategoricalOps.top_p(P, 1.0).allclose(P)
    for bad in (0.0, 1.5):
        with pytest.raises(InvalidDistribution):
            CategoricalOps.top_p(P, bad)
