"""Tests for the tree planner dynamic programs and handcrafted shapes."""

import numpy as np
import pytest

from src.errors import Infeasible, InvariantViolation, RankOutOfRange, TooLarge
from src.planner import PlanResult, TreePlanner
from src.selfcheck import random_acceptance
from src.tree import AcceptanceVector, TreeMetrics, TreeTopology, power_law_acceptance


def test_unbounded_small_budgets():
    p = AcceptanceVector([0.8, 0.4], strict_mass=False)
    planner = TreePlanner(p)
    one = planner.best_tree_unbounded(1)
    assert one.value == 1.0
    assert one.topology == TreeTopology.root_only()
    two = planner.best_tree_unbounded(2)
    assert two.value == pytest.approx(1.8)
    assert two.topology == TreeTopology.chain(1)


def test_unbounded_matches_brute_force_example():
    p = AcceptanceVector([0.8, 0.4, 0.2], strict_mass=False)
    plan = TreePlanner(p, kmax=3).best_tree_unbounded(6)
    brute = TreePlanner.brute_force_best_tree(6, p, kmax=3)
    assert plan.value == pytest.approx(brute.value, abs=1e-9)
    plan.check(p)


def test_bounded_examples():
    p = AcceptanceVector([0.5, 0.3, 0.2, 0.1], strict_mass=False)
    planner = TreePlanner(p, kmax=4)
    flat = planner.best_tree_bounded(10, 1)
    assert flat.value == 1.0
    assert flat.topology.size == 1
    star = planner.best_tree_bounded(5, 2)
    assert star.value == pytest.approx(2.1)
    assert star.topology.children(0) == (1, 2, 3, 4)


def test_bounded_random_matches_brute_force(rng):
    for _ in range(5):
        p = random_acceptance(rng, 3)
        plan = TreePlanner(p).best_tree_bounded(8, 3)
        brute = TreePlanner.brute_force_best_tree(8, p, dmax=3)
        assert plan.value == pytest.approx(brute.value, abs=1e-9)
        assert plan.topology.layers <= 3


def test_brute_force_hand_values():
    p = AcceptanceVector([0.6, 0.3])
    assert TreePlanner.brute_force_best_tree(1, p).value == 1.0
    best = TreePlanner.brute_force_best_tree(3, p)
    assert best.value == pytest.approx(1.96)
    assert best.topology == TreeTopology.chain(2)
    with pytest.raises(TooLarge):
        TreePlanner.brute_force_best_tree(10, p)


def test_dynamic_programs_match_enumeration(rng):
    for _ in range(20):
        p = random_acceptance(rng, 3)
        for kmax in (1, 2, 3):
            planner = TreePlanner(p, kmax)
            for n in range(1, 9):
                brute = TreePlanner.brute_force_best_tree(n, p, kmax)
                plan = planner.best_tree_unbounded(n)
                assert abs(plan.value - brute.value) <= 1e-9
                assert abs(TreeMetrics.expected_tokens(plan.topology, p) - plan.value) <= 1e-9
                for d in range(1, 5):
                    brute = TreePlanner.brute_force_best_tree(n, p, kmax, d)
                    plan = planner.best_tree_bounded(n, d)
                    assert abs(plan.value - brute.value) <= 1e-9
                    assert plan.topology.layers <= d
                    assert plan.topology.max_children() <= kmax


def test_feasibility_table_anchors():
    R = TreePlanner.feasibility_table(3, 2, 2)
    assert R(1, 1, 0) == 1
    assert R(2, 2, 1) == 1
    assert R(3, 2, 2) == 1
    assert R(2, 1, 1) == 0
    assert R(3, 2, 1) == 0


def test_feasibility_agrees_with_value_table():
    p = AcceptanceVector([0.5, 0.3, 0.1])
    table = TreePlanner(p).value_table(12, 5)
    assert np.array_equal(table.feasible().R, TreePlanner.feasibility_table(12, 5, 3).R)


def test_value_curve_is_nondecreasing():
    p = AcceptanceVector([0.5, 0.2, 0.1, 0.05])
    curve = TreePlanner(p).value_curve(200)
    assert curve[0] == 1.0
    assert np.all(np.diff(curve) > 0)


def test_plan_dispatch_and_config():
    p = AcceptanceVector([0.6, 0.2])
    planner = TreePlanner(p)
    assert planner.plan(1).config == '(1,1)'
    bounded = planner.plan(16, 4)
    assert bounded.config == '(16,4)'
    assert bounded.to_dict()['d'] == 4
    assert bounded.to_dict()['budget_used'] == bounded.topology.size


def test_depth_bound_beyond_budget_is_capped():
    p = AcceptanceVector([0.6, 0.2, 0.1])
    planner = TreePlanner(p)
    deep = planner.best_tree_bounded(32, 10**6)
    assert deep.value == pytest.approx(planner.best_tree_unbounded(32).value, abs=1e-9)
    assert planner.value_table(1, 1).L == 32
    assert deep.config == '(32,1000000)'


def test_plan_check_detects_inconsistency():
    p = AcceptanceVector([0.6])
    bad = PlanResult(3.0, TreeTopology.chain(1), 2, 2)
    with pytest.raises(InvariantViolation):
        bad.check(p)


def test_planner_errors():
    p = AcceptanceVector([0.6, 0.2])
    with pytest.raises(RankOutOfRange):
        TreePlanner(p, kmax=3)
    with pytest.raises(Infeasible):
        TreePlanner(p).best_tree_bounded(0, 2)
    with pytest.raises(TooLarge):
        TreePlanner(p).value_curve(10_000)


def test_structure_upper_bounds():
    assert TreePlanner.structure_upper_bound('sequence', AcceptanceVector([0.8, 0.1])) == pytest.approx(5.0)
    assert TreePlanner.structure_upper_bound(
        'k_independent', AcceptanceVector([0.8, 0.1]), k=2) == pytest.approx(5.5)
    assert TreePlanner.structure_upper_bound('binary', AcceptanceVector([0.5, 0.3])) == pytest.approx(5.0)
    assert TreePlanner.structure_upper_bound('k_ary', AcceptanceVector([0.5, 0.3]), k=2) == pytest.approx(5.0)
    assert TreePlanner.structure_upper_bound('sequence', AcceptanceVector([1.0])) == float('inf')


def test_fixed_structure_values():
    assert TreePlanner.fixed_structure_value('sequence', 3, AcceptanceVector([0.8])) == pytest.approx(2.44)
    p = AcceptanceVector([0.5, 0.3])
    assert TreePlanner.fixed_structure_value('k_ary', 7, p, k=2) == pytest.approx(2.44)
    assert TreePlanner.fixed_structure_value('binary', 7, p) == pytest.approx(2.44)


def test_fixed_structure_shapes():
    chains = TreePlanner.fixed_structure_topology('k_independent', 9, k=2)
    assert chains.size == 9
    assert chains.children(0) == (1, 2)
    assert chains.depth == 4
    assert TreePlanner.fixed_structure_topology('k_independent', 2, k=4).size == 1
    assert TreePlanner.fixed_structure_topology('k_ary', 13, k=3).depth == 2


def test_fixed_structures_stay_below_bounds(rng):
    budgets = [4, 8, 16, 32, 64, 128, 256, 512]
    for _ in range(10):
        p = random_acceptance(rng, 16)
        for kind, k in (('sequence', 1), ('k_independent', 4), ('k_independent', 16),
                        ('binary', 2), ('k_ary', 4)):
            bound = TreePlanner.structure_upper_bound(kind, p, k)
            for n in budgets:
                topology = TreePlanner.fixed_structure_topology(kind, n, k)
                exact = TreeMetrics.expected_tokens(topology, p)
                assert exact <= bound + 1e-9
                counts = TreeMetrics.simulate_trials(topology, p, 2000, rng)
                sigma = counts.std(ddof=1) / np.sqrt(counts.size)
                assert counts.mean() <= bound + 5 * sigma + 1e-9


@pytest.mark.parametrize('b', [0.5, 1.0, 2.0])
def test_power_law_curve_strictly_increasing(b):
    p = power_law_acceptance(b, 64)
    budgets = 2 ** np.arange(2, 10)
    curve = TreePlanner(p).value_curve(512)
    assert np.all(np.diff(curve[budgets - 1]) > 0)


def test_optimal_tree_beats_independent_sequences_at_scale():
    p = power_law_acceptance(1.0, 64)
    best = TreePlanner(p).best_tree_unbounded(512).value
    bound = TreePlanner.structure_upper_bound('k_independent', p, 16)
    assert best >= 1.2 * bound
