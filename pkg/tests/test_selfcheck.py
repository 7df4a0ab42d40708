"""Tests for the random instance generators and the self-check suite."""

import numpy as np

from src.selfcheck import (
    CheckResult,
    SelfCheck,
    print_selfcheck_report,
    random_acceptance,
    random_categorical,
    random_topology,
)


def test_random_categorical_keeps_one_token(rng):
    for _ in range(100):
        dist = random_categorical(rng, 5, zero_prob=0.9)
        assert dist.support().size >= 1
        assert abs(dist.probs.sum() - 1.0) < 1e-12


def test_random_acceptance_is_valid(rng):
    for _ in range(50):
        p = random_acceptance(rng, 6)
        assert np.all(np.diff(p.values) <= 0)
        assert p.values.sum() < 1.0


def test_random_topology_respects_branching(rng):
    for size in (1, 5, 12):
        topology = random_topology(rng, size, 2)
        assert topology.size == size
        assert topology.max_children() <= 2


def test_suite_passes(capsys):
    results = SelfCheck(seed=2, instances=10).run()
    assert [r.name for r in results] == [
        'distribution preservation',
        'optimal transport at k=1',
        'cover property',
        'expected tokens closed form',
        'dynamic program vs brute force',
    ]
    assert all(r.passed is True for r in results)
    assert print_selfcheck_report(results)
    assert 'All checks passed' in capsys.readouterr().out


def test_report_flags_failures(capsys):
    results = [CheckResult('a', True, 'ok'), CheckResult('b', np.bool_(False), 'off')]
    assert results[1].passed is False
    assert not print_selfcheck_report(results)
    assert '✗ b' in capsys.readouterr().out
