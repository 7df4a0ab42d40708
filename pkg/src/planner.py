"""
Tree Planner Module
Dynamic programs for the token tree that maximizes expected generated
tokens, with and without a depth bound, plus enumeration oracles and the
closed-form bounds of handcrafted tree shapes.
"""

import logging
import numpy as np
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

from src.errors import (
    Infeasible,
    InvalidParameter,
    InvariantViolation,
    RankOutOfRange,
    TooLarge,
)
from src.tree import AcceptanceVector, TreeMetrics, TreeTopology

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12
MAX_BUDGET = 4096
BRUTE_FORCE_LIMIT = 9
STRUCTURES = ('sequence', 'k_independent', 'binary', 'k_ary')


@dataclass(frozen=True)
class PlanResult:
    """
    Planned tree and its expected generated tokens.

    Attributes:
        value: Expected tokens per step, F(tree)
        topology: The tree
        budget_used: Number of nodes in the tree
        budget: Requested size budget n
        depth_bound: Requested layer bound d, None when unbounded
    """

    value: float
    topology: TreeTopology
    budget_used: int
    budget: int
    depth_bound: Optional[int] = None

    @property
    def depth(self) -> int:
        """Layers of the returned tree (root-only counts as 1)."""
        return self.topology.layers

    @property
    def config(self) -> str:
        """'(size,depth)' label."""
        d = self.depth_bound if self.depth_bound is not None else self.depth
        return f"({self.budget},{d})"

    def check(self, p: AcceptanceVector):
        """Raise InvariantViolation if value disagrees with the tree's expected tokens."""
        recomputed = TreeMetrics.expected_tokens(self.topology, p)
        if abs(recomputed - self.value) > 1e-9 or self.budget_used > self.budget:
            raise InvariantViolation(
                f"Plan value {self.value!r} disagrees with tree value {recomputed!r}")

    def to_dict(self) -> Dict:
        return {
            'value': self.value,
            'topology': self.topology.to_dict(),
            'n': self.budget,
            'd': self.depth_bound if self.depth_bound is not None else self.depth,
            'budget_used': self.budget_used,
        }


@dataclass(frozen=True)
class FeasibilityTable:
    """
    R[m, l, b] = 1 when a tree with m nodes, at most l layers and exactly b
    root children exists. Index 0 of m and l is unused.
    """

    R: np.ndarray

    def __call__(self, m: int, l: int, b: int) -> int:
        return int(self.R[m, l, b])


@dataclass(frozen=True)
class ValueTable:
    """
    T[m, l, b]: best expected tokens over trees with m nodes, at most l layers
    and b root children; -inf where infeasible. `back` holds the size of the
    tree before its last root branch was attached, `best_branches` the branch
    count achieving max_b T[m, l, b].
    """

    T: np.ndarray
    back: np.ndarray
    best_branches: np.ndarray

    @property
    def M(self) -> int:
        return self.T.shape[0] - 1

    @property
    def L(self) -> int:
        return self.T.shape[1] - 1

    @property
    def K(self) -> int:
        return self.T.shape[2] - 1

    def best(self, m: int, l: int) -> float:
        return float(self.T[m, l, self.best_branches[m, l]])

    def feasible(self) -> FeasibilityTable:
        return FeasibilityTable(np.isfinite(self.T).astype(np.int8))


def _first_max(values: np.ndarray) -> Tuple[int, float]:
    """Index of the first entry within TIE_TOL of the maximum."""
    top = values.max()
    if not np.isfinite(top):
        return 0, -np.inf
    idx = int(np.flatnonzero(values >= top - TIE_TOL)[0])
    return idx, float(values[idx])


class TreePlanner:
    """
    Optimal token trees for a positional acceptance vector.

    Tables are built lazily and reused across calls on the same instance.
    """

    def __init__(self, p: AcceptanceVector, kmax: Optional[int] = None):
        """
        Initialize the planner.

        Args:
            p: Nonincreasing acceptance vector
            kmax: Maximum children per node, defaults to len(p)
        """
        if kmax is None:
            kmax = p.kmax
        if not 1 <= kmax <= p.kmax:
            raise RankOutOfRange(f"kmax={kmax} must lie in [1, {p.kmax}]")
        self.p = p
        self.kmax = kmax
        self._weights = np.asarray(p.values[:kmax], dtype=float)
        self._curve: Optional[np.ndarray] = None
        self._branch_values: Optional[np.ndarray] = None
        self._split: Optional[np.ndarray] = None
        self._best_branches: Optional[np.ndarray] = None
        self._table: Optional[ValueTable] = None

    # ------------------------------------------------------------------
    # Unbounded depth
    # ------------------------------------------------------------------

    def _build_unbounded(self, n: int):
        K = self.kmax
        p = self._weights
        c = np.full(n + 1, -np.inf)
        branch = np.full((K + 1, n + 1), -np.inf)
        split = np.zeros((K + 1, n + 1), dtype=np.int64)
        best_branches = np.zeros(n + 1, dtype=np.int64)
        c[1] = 1.0

        for m in range(2, n + 1):
            branch[1, m] = 1.0 + p[0] * c[m - 1]
            for L in range(2, min(K, m - 1) + 1):
                # last branch (rank L) holds m - x nodes, x in [L, m-1]
                vals = branch[L - 1, L:m] + p[L - 1] * c[m - L:0:-1]
                idx, val = _first_max(vals)
                branch[L, m] = val
                split[L, m] = L + idx
            idx, val = _first_max(branch[1:, m])
            best_branches[m] = idx + 1
            c[m] = val

        self._curve = c
        self._branch_values = branch
        self._split = split
        self._best_branches = best_branches

    def value_curve(self, n: int) -> np.ndarray:
        """
        Exact-size optimum c(m) for m = 1..n.

        Returns:
            Array of length n with c(1) = 1
        """
        if n < 1:
            raise Infeasible("Budget must be at least 1")
        if n > MAX_BUDGET:
            raise TooLarge(f"Budgets above {MAX_BUDGET} are not supported")
        if self._curve is None or self._curve.size <= n:
            self._build_unbounded(n)
        return self._curve[1:n + 1].copy()

    def _branch_sizes(self, m: int) -> List[int]:
        sizes = []
        L = int(self._best_branches[m])
        while L > 1:
            x = int(self._split[L, m])
            sizes.append(m - x)
            m = x
            L -= 1
        sizes.append(m - 1)
        return sizes[::-1]

    def best_tree_unbounded(self, n: int) -> PlanResult:
        """
        Tree of exactly n nodes maximizing expected tokens, at most kmax children per node.

        Args:
            n: Budget, >= 1

        Returns:
            PlanResult
        """
        value = float(self.value_curve(n)[-1])
        parents: List[Optional[int]] = [None]
        ranks = [0]
        queue = [(0, n)]
        head = 0
        while head < len(queue):
            node, m = queue[head]
            head += 1
            if m == 1:
                continue
            for rank, size in enumerate(self._branch_sizes(m), start=1):
                parents.append(node)
                ranks.append(rank)
                queue.append((len(parents) - 1, size))
        topology = TreeTopology(parents, ranks)
        return PlanResult(value, topology, topology.size, n)

    # ------------------------------------------------------------------
    # Bounded depth
    # ------------------------------------------------------------------

    @staticmethod
    def feasibility_table(M: int, L: int, K: int) -> FeasibilityTable:
        """
        Which (size, layer bound, root branches) combinations admit a tree.

        Args:
            M: Maximum size
            L: Maximum layer bound
            K: Maximum branches per node

        Returns:
            FeasibilityTable of shape (M+1, L+1, K+1)
        """
        if min(M, L, K) < 1:
            raise InvalidParameter("M, L and K must be >= 1")
        R = np.zeros((M + 1, L + 1, K + 1), dtype=np.int8)
        anyb = np.zeros((M + 1, L + 1), dtype=np.int8)
        for l in range(1, L + 1):
            R[1, l, 0] = 1
            if l >= 2:
                for m in range(2, M + 1):
                    R[m, l, 1] = anyb[m - 1, l - 1]
                    for b in range(2, min(K, m - 1) + 1):
                        left = R[1:m, l, b - 1]
                        right = anyb[m - 1:0:-1, l - 1]
                        R[m, l, b] = int(np.any(left & right))
            anyb[:, l] = R[:, l, :].max(axis=1)
        return FeasibilityTable(R)

    def value_table(self, M: int, L: int) -> ValueTable:
        """
        Best values T[m, l, b] with backpointers for every m <= M, l <= L.

        Args:
            M: Maximum size
            L: Maximum layer bound

        Returns:
            ValueTable
        """
        if self._table is not None and self._table.M >= M and self._table.L >= L:
            return self._table
        if M > MAX_BUDGET:
            raise TooLarge(f"Budgets above {MAX_BUDGET} are not supported")
        K = self.kmax
        p = self._weights
        T = np.full((M + 1, L + 1, K + 1), -np.inf)
        back = np.zeros((M + 1, L + 1, K + 1), dtype=np.int64)
        best = np.full((M + 1, L + 1), -np.inf)
        best_branches = np.zeros((M + 1, L + 1), dtype=np.int64)

        for l in range(1, L + 1):
            T[1, l, 0] = 1.0
            if l >= 2:
                for m in range(2, M + 1):
                    T[m, l, 1] = 1.0 + p[0] * best[m - 1, l - 1]
                    for b in range(2, min(K, m - 1) + 1):
                        # y nodes with b-1 branches, then a rank-b branch of m - y nodes
                        vals = T[1:m, l, b - 1] + p[b - 1] * best[m - 1:0:-1, l - 1]
                        idx, val = _first_max(vals)
                        T[m, l, b] = val
                        back[m, l, b] = idx + 1
            for m in range(1, M + 1):
                idx, val = _first_max(T[m, l, :])
                best[m, l] = val
                best_branches[m, l] = idx

        self._table = ValueTable(T, back, best_branches)
        return self._table

    def bounded_value_grid(self, M: int, L: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        G(n, d) = best value with at most n nodes and d layers, for all n <= M, d <= L.

        Returns:
            Tuple of (G, size) arrays of shape (M+1, L+1); size holds the
            smallest tree size attaining G
        """
        table = self.value_table(M, L)
        exact = np.full((M + 1, L + 1), -np.inf)
        for m in range(1, M + 1):
            for l in range(1, L + 1):
                exact[m, l] = table.T[m, l, table.best_branches[m, l]]
        G = np.full((M + 1, L + 1), -np.inf)
        size = np.zeros((M + 1, L + 1), dtype=np.int64)
        for l in range(1, L + 1):
            best_val, best_m = -np.inf, 0
            for m in range(1, M + 1):
                if exact[m, l] > best_val + TIE_TOL:
                    best_val, best_m = exact[m, l], m
                G[m, l] = best_val
                size[m, l] = best_m
        return G, size

    def _reconstruct_bounded(self, table: ValueTable, m: int, l: int) -> TreeTopology:
        parents: List[Optional[int]] = [None]
        ranks = [0]
        queue = [(0, m, l, int(table.best_branches[m, l]))]
        head = 0
        while head < len(queue):
            node, mm, ll, b = queue[head]
            head += 1
            subtrees = []
            while b >= 2:
                y = int(table.back[mm, ll, b])
                last = mm - y
                subtrees.append((last, ll - 1, int(table.best_branches[last, ll - 1])))
                mm, b = y, b - 1
            if b == 1:
                subtrees.append((mm - 1, ll - 1, int(table.best_branches[mm - 1, ll - 1])))
            for rank, (size, layers, branches) in enumerate(reversed(subtrees), start=1):
                parents.append(node)
                ranks.append(rank)
                queue.append((len(parents) - 1, size, layers, branches))
        return TreeTopology(parents, ranks)

    def best_tree_bounded(self, n: int, d: int) -> PlanResult:
        """
        Best tree with at most n nodes and at most d layers.

        Args:
            n: Size budget, >= 1
            d: Layer bound, >= 1 (d = 1 admits only the root)

        Returns:
            PlanResult
        """
        if n < 1 or d < 1:
            raise Infeasible(f"No tree has size <= {n} and depth <= {d}")
        # a tree of at most n nodes never has more than n layers
        layers = min(d, n)
        table = self.value_table(n, layers)
        best_val, best_m = -np.inf, 0
        for m in range(1, n + 1):
            val = table.best(m, layers)
            if val > best_val + TIE_TOL:
                best_val, best_m = val, m
        if not np.isfinite(best_val):
            raise Infeasible(f"No tree has size <= {n} and depth <= {d}")
        topology = self._reconstruct_bounded(table, best_m, layers)
        return PlanResult(float(best_val), topology, topology.size, n, d)

    def plan(self, n: int, d: Optional[int] = None) -> PlanResult:
        """Unbounded plan when d is None, depth-bounded otherwise."""
        if d is None:
            return self.best_tree_unbounded(n)
        return self.best_tree_bounded(n, d)

    # ------------------------------------------------------------------
    # Oracles and handcrafted shapes
    # ------------------------------------------------------------------

    @staticmethod
    def brute_force_best_tree(n: int, p: AcceptanceVector, kmax: Optional[int] = None,
                              dmax: Optional[int] = None) -> PlanResult:
        """
        Enumerate every ordered tree with at most n nodes and return the best.

        Args:
            n: Size budget, at most 9
            p: Acceptance vector
            kmax: Maximum children per node, defaults to len(p)
            dmax: Optional layer bound

        Returns:
            PlanResult (smallest size among ties)
        """
        if n > BRUTE_FORCE_LIMIT:
            raise TooLarge(f"Brute-force enumeration is limited to n <= {BRUTE_FORCE_LIMIT}")
        if n < 1:
            raise Infeasible("Budget must be at least 1")
        kmax = p.kmax if kmax is None else kmax
        if kmax > p.kmax:
            raise RankOutOfRange(f"kmax={kmax} exceeds acceptance vector length {p.kmax}")
        layers = n if dmax is None else min(dmax, n)
        weights = tuple(float(x) for x in p.values[:kmax])

        @lru_cache(maxsize=None)
        def trees(size: int, depth: int) -> Tuple[Tuple[float, tuple], ...]:
            # (value, nested) for every ordered tree of exactly `size` nodes within `depth` layers
            if size == 1:
                return ((1.0, ()),)
            if depth <= 1:
                return ()
            result = []
            for forest_value, forest in forests(size - 1, depth - 1, 1):
                result.append((1.0 + forest_value, forest))
            return tuple(result)

        @lru_cache(maxsize=None)
        def forests(total: int, depth: int, rank: int) -> Tuple[Tuple[float, tuple], ...]:
            # Sequences of subtrees with ranks rank, rank+1, ... using `total` nodes
            if total == 0:
                return ((0.0, ()),)
            if rank > kmax:
                return ()
            result = []
            for first in range(1, total + 1):
                for value, nested in trees(first, depth):
                    for rest_value, rest in forests(total - first, depth, rank + 1):
                        result.append((weights[rank - 1] * value + rest_value, (nested,) + rest))
            return tuple(result)

        best_value, best_nested = -np.inf, None
        for size in range(1, n + 1):
            for value, nested in trees(size, layers):
                if value > best_value + TIE_TOL:
                    best_value, best_nested = value, nested
        topology = TreeTopology.from_nested(best_nested)
        return PlanResult(float(best_value), topology, topology.size, n, dmax)

    @staticmethod
    def structure_upper_bound(kind: str, p: AcceptanceVector, k: int = 1) -> float:
        """
        Limit of expected tokens for a handcrafted shape as its size grows.

        Args:
            kind: 'sequence', 'k_independent', 'binary' or 'k_ary'
            p: Acceptance vector
            k: Branching (k_independent, k_ary)

        Returns:
            Upper bound, +inf when the relevant cumulative acceptance is 1
        """
        if kind == 'sequence':
            mass, numerator = p.cumulative(1), 1.0
        elif kind == 'k_independent':
            mass, numerator = p.cumulative(1), None
        elif kind == 'binary':
            mass, numerator = p.cumulative(2), 1.0
        elif kind == 'k_ary':
            mass, numerator = p.cumulative(k), 1.0
        else:
            raise InvalidParameter(f"Unknown structure '{kind}'; choose from {', '.join(STRUCTURES)}")

        if mass >= 1.0:
            logger.warning("Upper bound for %s diverges (cumulative acceptance %.6g)", kind, mass)
            return float('inf')
        if numerator is None:
            return 1.0 + p.cumulative(k) / (1.0 - mass)
        return numerator / (1.0 - mass)

    @staticmethod
    def fixed_structure_topology(kind: str, n: int, k: int = 1) -> TreeTopology:
        """
        Handcrafted tree of at most n nodes.

        sequence: chain of n-1 tokens. k_independent: k chains of
        floor((n-1)/k) tokens each. binary / k_ary: complete tree filled
        breadth-first to n nodes.
        """
        if n < 1:
            raise Infeasible("Budget must be at least 1")
        if kind == 'sequence':
            return TreeTopology.chain(n - 1)
        if kind == 'k_independent':
            length = (n - 1) // k
            if length == 0:
                return TreeTopology.root_only()
            chain: list = []
            for _ in range(length - 1):
                chain = [chain]
            return TreeTopology.from_nested([chain] * k)
        if kind in ('binary', 'k_ary'):
            width = 2 if kind == 'binary' else k
            if width < 1:
                raise InvalidParameter("k must be >= 1")
            counts = [max(0, min(width, n - 1 - width * i)) for i in range(n)]
            return TreeTopology.from_child_counts(counts)
        raise InvalidParameter(f"Unknown structure '{kind}'; choose from {', '.join(STRUCTURES)}")

    @staticmethod
    def fixed_structure_value(kind: str, n: int, p: AcceptanceVector, k: int = 1) -> float:
        """Expected tokens of fixed_structure_topology(kind, n, k)."""
        topology = TreePlanner.fixed_structure_topology(kind, n, k)
        return TreeMetrics.expected_tokens(topology, p)


def print_plan_report(result: PlanResult, p: AcceptanceVector):
    """Print the planned tree and where its expected tokens come from."""
    print("\n" + "=" * 50)
    print("TREE PLAN")
    print("=" * 50)
    print(f"Expected tokens per step: {result.value:.6f}")
    print(f"Nodes used:               {result.budget_used}")
    print(f"Tree config (size,depth): {result.config}")
    print(f"Widest node:              {result.topology.max_children()} children")
    print("\nExpected accepted mass per layer:")
    for layer, mass in enumerate(TreeMetrics.layer_mass(result.topology, p)):
        print(f"  layer {layer:2d}: {mass:.6f}")
    print("=" * 50 + "\n")
