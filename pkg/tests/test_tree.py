"""Tests for tree topologies, acceptance vectors and expected tokens."""

import numpy as np
import pytest

from src.errors import InvalidAcceptanceVector, InvalidTopology, ParseError, RankOutOfRange
from src.selfcheck import random_acceptance, random_topology
from src.tree import AcceptanceVector, TreeMetrics, TreeTopology, power_law_acceptance


def example_tree():
    # root, two children, grandchild under child 1
    return TreeTopology.from_nested([[[]], []])


def test_topology_validation():
    with pytest.raises(InvalidTopology):
        TreeTopology([], [])
    with pytest.raises(InvalidTopology):
        TreeTopology([None, 0], [0, 2])
    with pytest.raises(InvalidTopology):
        TreeTopology([None, 1], [0, 1])
    with pytest.raises(InvalidTopology):
        TreeTopology([None, None], [0, 0])
    # node 3 is a child of node 2 but node 2's sibling order puts it first
    with pytest.raises(InvalidTopology):
        TreeTopology([None, 0, 0, 2, 1], [0, 1, 2, 1, 1])


def test_topology_accessors():
    tree = example_tree()
    assert tree.size == 4
    assert tree.depth == 2
    assert tree.layers == 3
    assert tree.children(0) == (1, 2)
    assert tree.leaves() == [2, 3]
    assert tree.layer_nodes(1) == [1, 2]
    assert tree.to_nested() == [[[]], []]


def test_path():
    tree = TreeTopology.from_nested([[], [[], [], []]])
    assert tree.path(0) == []
    # third child of the root's second child
    assert tree.path(5) == [2, 3]
    assert tree.path(1) == [1]


def test_score():
    p = AcceptanceVector([0.7, 0.2])
    tree = TreeTopology.from_nested([[], [[]]])
    assert TreeMetrics.score(tree, 0, p) == 1.0
    assert TreeMetrics.score(tree, 1, p) == pytest.approx(0.7)
    assert tree.path(3) == [2, 1]
    assert TreeMetrics.score(tree, 3, p) == pytest.approx(0.14)


def test_expected_tokens_hand_values():
    assert TreeMetrics.expected_tokens(TreeTopology.root_only(), AcceptanceVector([0.5])) == 1.0
    p = AcceptanceVector([0.5, 0.25])
    assert TreeMetrics.expected_tokens(example_tree(), p) == pytest.approx(2.0)


def test_adding_a_leaf_adds_its_score():
    p = AcceptanceVector([0.5, 0.25])
    tree = example_tree()
    bigger = TreeTopology.from_nested([[[]], [[]]])
    added = bigger.size - 1
    assert TreeMetrics.expected_tokens(bigger, p) == pytest.approx(
        TreeMetrics.expected_tokens(tree, p) + TreeMetrics.score(bigger, added, p))


def test_chain_matches_sequence_formula():
    p1 = 0.8
    p = AcceptanceVector([p1])
    for length in range(6):
        expected = (1 - p1 ** (length + 1)) / (1 - p1)
        assert TreeMetrics.expected_tokens(TreeTopology.chain(length), p) == pytest.approx(expected)


def test_expected_tokens_needs_ranks():
    with pytest.raises(RankOutOfRange):
        TreeMetrics.expected_tokens(example_tree(), AcceptanceVector([0.5]))


def test_simulation_trivial_cases(rng):
    p = AcceptanceVector([0.6, 0.3])
    assert TreeMetrics.simulate_expected_tokens(TreeTopology.root_only(), p, 1000, rng) == 1.0
    assert TreeMetrics.simulate_expected_tokens(TreeTopology.chain(4), AcceptanceVector([1.0]), 1000, rng) == 5.0
    zeros = AcceptanceVector([0.0, 0.0])
    assert TreeMetrics.simulate_expected_tokens(example_tree(), zeros, 1000, rng) == 1.0


def test_simulation_matches_closed_form_seven_nodes(rng):
    p = AcceptanceVector([0.6, 0.3, 0.1])
    tree = TreeTopology.from_nested([[[], [[]]], [[]], []])
    assert tree.size == 7
    counts = TreeMetrics.simulate_trials(tree, p, 100_000, rng)
    sigma = counts.std(ddof=1) / np.sqrt(counts.size)
    assert abs(counts.mean() - TreeMetrics.expected_tokens(tree, p)) < 4 * sigma


def test_simulation_matches_closed_form_random_instances(rng):
    worst = 0.0
    for _ in range(50):
        kmax = int(rng.integers(1, 4))
        p = random_acceptance(rng, kmax)
        tree = random_topology(rng, int(rng.integers(2, 15)), kmax)
        counts = TreeMetrics.simulate_trials(tree, p, 100_000, rng)
        sigma = max(counts.std(ddof=1) / np.sqrt(counts.size), 1e-12)
        worst = max(worst, abs(counts.mean() - TreeMetrics.expected_tokens(tree, p)) / sigma)
    # 50 instances: allow for the largest of 50 near-normal deviates
    assert worst < 4.5


def test_layer_mass():
    p = AcceptanceVector([0.5, 0.25])
    mass = TreeMetrics.layer_mass(example_tree(), p)
    assert mass == pytest.approx([1.0, 0.75, 0.25])


def test_codec_canonical_forms():
    assert TreeTopology.root_only().to_json() == '{"parents":[null],"ranks":[0]}'
    assert TreeTopology.chain(1).to_json() == '{"parents":[null,0],"ranks":[0,1]}'


def test_codec_round_trip(rng):
    tree = random_topology(rng, 20, 4)
    assert TreeTopology.from_json(tree.to_json()) == tree


def test_codec_errors():
    with pytest.raises(ParseError):
        TreeTopology.from_json('{"parents":[null,0]}')
    with pytest.raises(ParseError):
        TreeTopology.from_json('{"parents":[null,0],"ranks":[0,2]}')
    with pytest.raises(ParseError):
        TreeTopology.from_json('not json')
    with pytest.raises(ParseError):
        TreeTopology.from_json('{"parents":[null,0.5],"ranks":[0,1]}')


def test_acceptance_vector_validation():
    with pytest.raises(InvalidAcceptanceVector):
        AcceptanceVector([0.2, 0.5])
    with pytest.raises(InvalidAcceptanceVector):
        AcceptanceVector([0.8, 0.4])
    with pytest.raises(InvalidAcceptanceVector):
        AcceptanceVector([1.2])
    relaxed = AcceptanceVector([0.8, 0.4], strict_mass=False)
    assert relaxed.cumulative(2) == pytest.approx(1.2)


def test_acceptance_vector_accessors():
    p = AcceptanceVector([0.5, 0.3, 0.1])
    assert p[1] == 0.5
    assert p.cumulative(2) == pytest.approx(0.8)
    assert p.rejection_rates() == pytest.approx([0.5, 0.2, 0.1])
    assert p.truncated(2).kmax == 2
    with pytest.raises(RankOutOfRange):
        p[4]


def test_sorted_from_warns(caplog):
    p = AcceptanceVector.sorted_from([0.1, 0.5])
    assert p.to_list() == [0.5, 0.1]
    assert 'not monotone' in caplog.text


def test_acceptance_json_forms():
    assert AcceptanceVector.from_json('[0.5, 0.2]').to_list() == [0.5, 0.2]
    assert AcceptanceVector.from_json('{"p": [0.5, 0.2]}').to_list() == [0.5, 0.2]
    with pytest.raises(ParseError):
        AcceptanceVector.from_json('[]')


def test_power_law_acceptance():
    p = power_law_acceptance(1.0, 8)
    k = np.arange(1, 9)
    assert p.rejection_rates() == pytest.approx((k + 1.0) ** -1)
    with pytest.raises(InvalidAcceptanceVector):
        power_law_acceptance(0.0, 4)
