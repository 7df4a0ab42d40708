"""
Self-Check Module
Runs the exhaustive verification oracles on random instances and reports
pass/fail for each property.
"""

import logging
import numpy as np
from dataclasses import dataclass
from typing import Callable, List

from src.categorical import Categorical, CategoricalOps
from src.planner import TreePlanner
from src.tree import AcceptanceVector, TreeMetrics, TreeTopology
from src.verifiers import ExactNodeOracle, VerifierKind

logger = logging.getLogger(__name__)


def random_categorical(rng: np.random.Generator, vocab_size: int,
                       zero_prob: float = 0.0) -> Categorical:
    """Flat Dirichlet draw with each token zeroed with probability zero_prob (one survives)."""
    weights = rng.dirichlet(np.ones(vocab_size))
    if zero_prob > 0:
        mask = rng.random(vocab_size) < zero_prob
        mask[rng.integers(vocab_size)] = False
        weights[mask] = 0.0
    return CategoricalOps.normalize(weights)


def random_acceptance(rng: np.random.Generator, kmax: int) -> AcceptanceVector:
    """Nonincreasing acceptance vector with total mass below one."""
    mass = rng.dirichlet(np.ones(kmax + 1))[:kmax]
    return AcceptanceVector(np.sort(mass)[::-1])


def random_topology(rng: np.random.Generator, size: int, kmax: int) -> TreeTopology:
    """Random tree of `size` nodes with at most kmax children per node."""
    children: List[List[int]] = [[] for _ in range(size)]
    for v in range(1, size):
        candidates = [u for u in range(v) if len(children[u]) < kmax]
        children[candidates[rng.integers(len(candidates))]].append(v)

    def nest(u: int) -> list:
        return [nest(c) for c in children[u]]

    return TreeTopology.from_nested(nest(0))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        # numpy comparisons yield np.bool_, which json cannot encode
        object.__setattr__(self, 'passed', bool(self.passed))


class SelfCheck:
    """
    Oracle suite behind the `selfcheck` command.
    """

    def __init__(self, seed: int = 0, instances: int = 200):
        """
        Args:
            seed: Seed for the random instances
            instances: Number of random node instances per verifier
        """
        self.seed = seed
        self.instances = instances
        self.oracle = ExactNodeOracle()

    def _rng(self, tag: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, tag]))

    def check_distribution_preservation(self) -> CheckResult:
        rng = self._rng(1)
        worst = 0.0
        for _ in range(self.instances):
            V = int(rng.integers(2, 7))
            P = random_categorical(rng, V, zero_prob=0.3)
            Q = random_categorical(rng, V, zero_prob=0.3)
            k = int(rng.integers(0, V + 1))
            for kind in VerifierKind:
                out = self.oracle.exact_node_distribution(P, Q, k, kind).output
                worst = max(worst, float(np.abs(out.probs - P.probs).max()))
        return CheckResult('distribution preservation', worst <= 1e-9,
                           f"max |output - P| = {worst:.2e}")

    def check_optimal_transport(self) -> CheckResult:
        rng = self._rng(2)
        worst = 0.0
        for _ in range(100):
            V = int(rng.integers(2, 7))
            P, Q = random_categorical(rng, V), random_categorical(rng, V)
            expected = 1.0 - CategoricalOps.tv_distance(P, Q)
            for kind in (VerifierKind.SEQUOIA, VerifierKind.SPECINFER):
                got = self.oracle.exact_node_distribution(P, Q, 1, kind).acceptance
                worst = max(worst, abs(got - expected))
        topk = self.oracle.exact_node_distribution(
            Categorical([0.6, 0.4]), Categorical([0.6, 0.4]), 1, VerifierKind.TOPK).acceptance
        passed = worst <= 1e-9 and abs(topk - 0.6) <= 1e-12
        return CheckResult('optimal transport at k=1', passed,
                           f"max deviation {worst:.2e}; top-k on P=Q=[0.6,0.4] accepts {topk:.3f}")

    def check_cover(self) -> CheckResult:
        rng = self._rng(3)
        worst = 0.0
        for _ in range(50):
            V = int(rng.integers(2, 7))
            Q = random_categorical(rng, V, zero_prob=0.3)
            support = Q.support()
            weights = np.zeros(V)
            weights[support] = rng.dirichlet(np.ones(support.size))
            P = CategoricalOps.normalize(weights)
            got = self.oracle.exact_node_distribution(P, Q, support.size, VerifierKind.SEQUOIA).acceptance
            worst = max(worst, abs(1.0 - got))
        specinfer = self.oracle.exact_node_distribution(
            Categorical([1.0, 0.0]), Categorical([0.5, 0.5]), 2, VerifierKind.SPECINFER).acceptance
        passed = worst <= 1e-9 and abs(specinfer - 0.75) <= 1e-12
        return CheckResult('cover property', passed,
                           f"max shortfall {worst:.2e}; SpecInfer counterexample accepts {specinfer:.3f}")

    def check_expected_tokens(self) -> CheckResult:
        rng = self._rng(4)
        trials = 20000
        worst = 0.0
        for _ in range(20):
            kmax = int(rng.integers(1, 4))
            p = random_acceptance(rng, kmax)
            topology = random_topology(rng, int(rng.integers(1, 12)), kmax)
            counts = TreeMetrics.simulate_trials(topology, p, trials, rng)
            sigma = max(counts.std(ddof=1) / np.sqrt(trials), 1e-12)
            z = abs(counts.mean() - TreeMetrics.expected_tokens(topology, p)) / sigma
            worst = max(worst, z)
        return CheckResult('expected tokens closed form', worst <= 4.5,
                           f"max z-score {worst:.2f} over 20 trees")

    def check_dynamic_program(self) -> CheckResult:
        rng = self._rng(5)
        worst = 0.0
        for _ in range(20):
            p = random_acceptance(rng, 3)
            for kmax in (1, 2, 3):
                planner = TreePlanner(p, kmax)
                for n in range(1, 9):
                    brute = TreePlanner.brute_force_best_tree(n, p, kmax).value
                    worst = max(worst, abs(planner.best_tree_unbounded(n).value - brute))
                    for d in range(1, 5):
                        brute = TreePlanner.brute_force_best_tree(n, p, kmax, d).value
                        worst = max(worst, abs(planner.best_tree_bounded(n, d).value - brute))
        R = TreePlanner.feasibility_table(3, 2, 2)
        anchors = R(1, 1, 0) == 1 and R(2, 2, 1) == 1 and R(3, 2, 2) == 1 and R(2, 1, 1) == 0
        return CheckResult('dynamic program vs brute force', worst <= 1e-9 and anchors,
                           f"max deviation {worst:.2e}; feasibility anchors {'ok' if anchors else 'wrong'}")

    def checks(self) -> List[Callable[[], CheckResult]]:
        return [
            self.check_distribution_preservation,
            self.check_optimal_transport,
            self.check_cover,
            self.check_expected_tokens,
            self.check_dynamic_program,
        ]

    def run(self) -> List[CheckResult]:
        results = []
        for check in self.checks():
            result = check()
            logger.info("%s: %s (%s)", result.name, 'pass' if result.passed else 'FAIL', result.detail)
            results.append(result)
        return results


def print_selfcheck_report(results: List[CheckResult]) -> bool:
    """Print one line per check; returns True when all passed."""
    print("\n" + "=" * 50)
    print("SELF-CHECK")
    print("=" * 50)
    for result in results:
        mark = '✓' if result.passed else '✗'
        print(f"{mark} {result.name}: {result.detail}")
    passed = all(r.passed for r in results)
    print("=" * 50)
    print("All checks passed" if passed else "Some checks FAILED")
    return passed
