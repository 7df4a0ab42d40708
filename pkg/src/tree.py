"""
Token Tree Module
Tree topologies, positional acceptance vectors and the expected-token
closed form with its Monte Carlo check.
"""

import json
import logging
import numpy as np
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.errors import (
    InvalidAcceptanceVector,
    InvalidParameter,
    InvalidTopology,
    ParseError,
    RankOutOfRange,
)

logger = logging.getLogger(__name__)

MASS_TOL = 1e-9
ORDER_TOL = 1e-12


class TreeTopology:
    """
    Rooted token tree in canonical breadth-first order.

    Node 0 is the root. Every other node i has parents[i] < i, parents are
    nondecreasing, and the children of each node carry ranks 1..c in order.
    """

    def __init__(self, parents: Sequence[Optional[int]], ranks: Sequence[int]):
        """
        Initialize and validate the topology.

        Args:
            parents: Parent index per node, None for the root
            ranks: Child rank per node, 0 for the root

        Raises:
            InvalidTopology: if the description is not canonical
        """
        parents = list(parents)
        ranks = [int(r) for r in ranks]
        if len(parents) == 0:
            raise InvalidTopology("A tree needs at least the root node")
        if len(parents) != len(ranks):
            raise InvalidTopology(
                f"{len(parents)} parents but {len(ranks)} ranks")
        if parents[0] is not None or ranks[0] != 0:
            raise InvalidTopology("Node 0 must be the root with parent None and rank 0")

        children: List[List[int]] = [[] for _ in parents]
        depths = [0] * len(parents)
        last_parent = 0
        for i in range(1, len(parents)):
            parent = parents[i]
            if parent is None:
                raise InvalidTopology(f"Node {i} has no parent; only one root is allowed")
            parent = int(parent)
            if not 0 <= parent < i:
                raise InvalidTopology(f"Node {i} has parent {parent}; parents must precede children")
            if parent < last_parent:
                raise InvalidTopology(f"Node {i} breaks breadth-first order")
            if ranks[i] != len(children[parent]) + 1:
                raise InvalidTopology(
                    f"Node {i} has rank {ranks[i]}, expected {len(children[parent]) + 1}")
            # Breadth-first: a node's children come after all nodes of its parent's layer
            if depths[parent] + 1 < depths[i - 1]:
                raise InvalidTopology(f"Node {i} breaks breadth-first order")
            children[parent].append(i)
            depths[i] = depths[parent] + 1
            parents[i] = parent
            last_parent = parent

        self._parents: Tuple[Optional[int], ...] = tuple(parents)
        self._ranks: Tuple[int, ...] = tuple(ranks)
        self._children: Tuple[Tuple[int, ...], ...] = tuple(tuple(c) for c in children)
        self._depths: Tuple[int, ...] = tuple(depths)

    # ------------------------------------------------------------------
    # Construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def root_only(cls) -> 'TreeTopology':
        return cls([None], [0])

    @classmethod
    def chain(cls, length: int) -> 'TreeTopology':
        """Sequence of `length` speculated tokens below the root."""
        parents: List[Optional[int]] = [None] + list(range(length))
        return cls(parents, [0] + [1] * length)

    @classmethod
    def from_child_counts(cls, counts: Sequence[int]) -> 'TreeTopology':
        """
        Build from the number of children of each node in breadth-first order.

        Counts beyond the last node that exists are ignored.
        """
        parents: List[Optional[int]] = [None]
        ranks = [0]
        node = 0
        while node < len(parents):
            count = counts[node] if node < len(counts) else 0
            for r in range(1, count + 1):
                parents.append(node)
                ranks.append(r)
            node += 1
        return cls(parents, ranks)

    @classmethod
    def from_nested(cls, nested: Sequence[Any]) -> 'TreeTopology':
        """
        Build from nested child lists, e.g. [[[]], []] is a root with two
        children whose first child has one child.
        """
        parents: List[Optional[int]] = [None]
        ranks = [0]
        queue = [(0, nested)]
        head = 0
        while head < len(queue):
            node, subtrees = queue[head]
            head += 1
            for r, sub in enumerate(subtrees, start=1):
                parents.append(node)
                ranks.append(r)
                queue.append((len(parents) - 1, sub))
        return cls(parents, ranks)

    # ------------------------------------------------------------------
    # Accessors
    # ------------------------------------------------------------------

    @property
    def parents(self) -> Tuple[Optional[int], ...]:
        return self._parents

    @property
    def ranks(self) -> Tuple[int, ...]:
        return self._ranks

    @property
    def size(self) -> int:
        return len(self._parents)

    def __len__(self) -> int:
        return self.size

    @property
    def depth(self) -> int:
        """Longest root-to-leaf path in edges (root-only tree has depth 0)."""
        return max(self._depths)

    @property
    def layers(self) -> int:
        """Number of layers, depth + 1; the planner's depth bound counts these."""
        return self.depth + 1

    def node_depth(self, v: int) -> int:
        return self._depths[v]

    def children(self, v: int) -> Tuple[int, ...]:
        return self._children[v]

    def leaves(self) -> List[int]:
        return [v for v in range(self.size) if not self._children[v]]

    def max_children(self) -> int:
        return max(len(c) for c in self._children)

    def layer_nodes(self, depth: int) -> List[int]:
        return [v for v in range(self.size) if self._depths[v] == depth]

    def path(self, v: int) -> List[int]:
        """
        Child ranks along the root-to-v path.

        Args:
            v: Node index

        Returns:
            List of ranks, empty for the root
        """
        if not 0 <= v < self.size:
            raise InvalidTopology(f"Node {v} is not in a tree of size {self.size}")
        ranks = []
        while v != 0:
            ranks.append(self._ranks[v])
            v = self._parents[v]
        return ranks[::-1]

    def to_nested(self) -> list:
        def build(v: int) -> list:
            return [build(c) for c in self._children[v]]
        return build(0)

    # ------------------------------------------------------------------
    # Codec
    # ------------------------------------------------------------------

    def to_dict(self) -> Dict[str, list]:
        return {'parents': list(self._parents), 'ranks': list(self._ranks)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(',', ':'))

    @classmethod
    def from_dict(cls, data: Any) -> 'TreeTopology':
        if not isinstance(data, dict) or set(data) != {'parents', 'ranks'}:
            raise ParseError("Topology must be an object with exactly 'parents' and 'ranks'")
        parents, ranks = data['parents'], data['ranks']
        if not isinstance(parents, list) or not isinstance(ranks, list):
            raise ParseError("'parents' and 'ranks' must be arrays")
        for value in parents[1:] + ranks:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParseError(f"Expected integer in topology, got {value!r}")
        try:
            return cls(parents, ranks)
        except InvalidTopology as exc:
            raise ParseError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> 'TreeTopology':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"Invalid topology JSON: {exc}") from exc
        return cls.from_dict(data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TreeTopology):
            return NotImplemented
        return self._parents == other._parents and self._ranks == other._ranks

    def __hash__(self) -> int:
        return hash((self._parents, self._ranks))

    def __repr__(self) -> str:
        return f"TreeTopology(size={self.size}, depth={self.depth})"


@dataclass(frozen=True, eq=False)
class AcceptanceVector:
    """
    Positional acceptance probabilities p_1 >= p_2 >= ... >= p_kmax.

    p_i is the probability that the i-th child is the first one accepted.

    Attributes:
        values: Probabilities in [0, 1]
        strict_mass: Enforce sum(p) <= 1. Hand-written planning examples
            may relax this since the planner only needs monotone weights.
    """

    values: np.ndarray
    strict_mass: bool = field(default=True)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidAcceptanceVector("Acceptance vector must be a nonempty 1-D array")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
            raise InvalidAcceptanceVector("Acceptance probabilities must lie in [0, 1]")
        if np.any(np.diff(arr) > ORDER_TOL):
            raise InvalidAcceptanceVector(
                "Acceptance vector must be nonincreasing; sort it explicitly before planning")
        if self.strict_mass and arr.sum() > 1 + MASS_TOL:
            raise InvalidAcceptanceVector(
                f"Cumulative acceptance {arr.sum():.6g} exceeds 1")
        arr.flags.writeable = False
        object.__setattr__(self, 'values', arr)

    @property
    def kmax(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.kmax

    def __getitem__(self, rank: int) -> float:
        """1-based rank lookup."""
        if not 1 <= rank <= self.kmax:
            raise RankOutOfRange(f"Rank {rank} outside acceptance vector of length {self.kmax}")
        return float(self.values[rank - 1])

    def cumulative(self, k: int) -> float:
        """P_k = p_1 + ... + p_k."""
        if not 0 <= k <= self.kmax:
            raise RankOutOfRange(f"k={k} outside acceptance vector of length {self.kmax}")
        return float(self.values[:k].sum())

    def rejection_rates(self) -> np.ndarray:
        """r_k = 1 - P_k for k = 1..kmax."""
        return np.clip(1.0 - np.cumsum(self.values), 0.0, 1.0)

    def truncated(self, kmax: int) -> 'AcceptanceVector':
        if not 1 <= kmax <= self.kmax:
            raise RankOutOfRange(f"kmax={kmax} exceeds acceptance vector length {self.kmax}")
        return AcceptanceVector(self.values[:kmax], strict_mass=self.strict_mass)

    @classmethod
    def sorted_from(cls, values: Sequence[float]) -> 'AcceptanceVector':
        """Sort descending, logging a warning when the order changed."""
        arr = np.asarray(values, dtype=float)
        ordered = np.sort(arr)[::-1]
        if not np.array_equal(ordered, arr):
            logger.warning("Acceptance vector was not monotone; sorted for planning: %s",
                           np.array2string(arr, precision=4))
        return cls(ordered)

    def to_list(self) -> List[float]:
        return [float(x) for x in self.values]

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_json(cls, text: str) -> 'AcceptanceVector':
        """
        Parse a JSON array, or an object carrying the array under "p".
        """
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"Invalid acceptance JSON: {exc}") from exc
        if isinstance(data, dict):
            data = data.get('p')
        if not isinstance(data, list) or not data or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in data):
            raise ParseError("Acceptance vector must be a nonempty JSON array of numbers")
        return cls(np.asarray(data, dtype=float))

    def __eq__(self, other) -> bool:
        if not isinstance(other, AcceptanceVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


def power_law_acceptance(b: float, kmax: int) -> AcceptanceVector:
    """
    Acceptance vector whose rejection rate after k children is (k+1)^(-b).

    Args:
        b: Power-law exponent, > 0
        kmax: Vector length

    Returns:
        AcceptanceVector with p_k = k^(-b) - (k+1)^(-b)
    """
    if b <= 0:
        raise InvalidAcceptanceVector("Power-law exponent must be positive")
    k = np.arange(1, kmax + 1, dtype=float)
    return AcceptanceVector(k ** (-b) - (k + 1) ** (-b))


class TreeMetrics:
    """
    Scores and expected generated tokens of a tree under positional acceptance.
    """

    @staticmethod
    def _check_ranks(topology: TreeTopology, p: AcceptanceVector):
        widest = topology.max_children()
        if widest > p.kmax:
            raise RankOutOfRange(
                f"Tree has a node with {widest} children but the acceptance vector has length {p.kmax}")

    @staticmethod
    def path(topology: TreeTopology, v: int) -> List[int]:
        return topology.path(v)

    @staticmethod
    def score(topology: TreeTopology, v: int, p: AcceptanceVector) -> float:
        """
        f(v): product of p over the ranks on the path to v; f(root) = 1.
        """
        value = 1.0
        for rank in topology.path(v):
            value *= p[rank]
        return value

    @staticmethod
    def node_scores(topology: TreeTopology, p: AcceptanceVector) -> np.ndarray:
        """f(v) for every node, computed top-down in breadth-first order."""
        TreeMetrics._check_ranks(topology, p)
        scores = np.ones(topology.size)
        for v in range(1, topology.size):
            scores[v] = scores[topology.parents[v]] * p.values[topology.ranks[v] - 1]
        return scores

    @staticmethod
    def expected_tokens(topology: TreeTopology, p: AcceptanceVector) -> float:
        """
        Expected tokens generated per verification step, the sum of f(v).

        Args:
            topology: Speculated tree
            p: Acceptance vector covering every child rank in the tree

        Returns:
            Expected generated tokens (accepted nodes plus the bonus token)
        """
        return float(TreeMetrics.node_scores(topology, p).sum())

    @staticmethod
    def layer_mass(topology: TreeTopology, p: AcceptanceVector) -> np.ndarray:
        """Sum of scores per layer: the probability that some node at depth i is accepted."""
        scores = TreeMetrics.node_scores(topology, p)
        mass = np.zeros(topology.layers)
        for v in range(topology.size):
            mass[topology.node_depth(v)] += scores[v]
        return mass

    @staticmethod
    def simulate_trials(topology: TreeTopology, p: AcceptanceVector, trials: int,
                        rng: np.random.Generator) -> np.ndarray:
        """
        Tokens generated in each of `trials` independent positional-acceptance runs.

        At every accepted node a single uniform draw decides which child (if
        any) is accepted: child i with probability p_i, disjointly.

        Args:
            topology: Speculated tree
            p: Acceptance vector
            trials: Number of runs, >= 1
            rng: Seeded generator

        Returns:
            Integer array of generated tokens per run
        """
        if trials < 1:
            raise InvalidParameter("trials must be >= 1")
        TreeMetrics._check_ranks(topology, p)
        cdf = np.cumsum(p.values)
        counts = np.ones(trials, dtype=np.int64)
        current = np.zeros(trials, dtype=np.int64)
        alive = np.ones(trials, dtype=bool)

        for depth in range(topology.depth):
            u = rng.random(trials)
            next_node = np.full(trials, -1, dtype=np.int64)
            for v in topology.layer_nodes(depth):
                kids = topology.children(v)
                if not kids:
                    continue
                mask = alive & (current == v)
                if not mask.any():
                    continue
                idx = np.searchsorted(cdf[:len(kids)], u[mask], side='right')
                chosen = np.where(idx < len(kids), np.asarray(kids)[np.minimum(idx, len(kids) - 1)], -1)
                next_node[mask] = chosen
            alive = next_node >= 0
            counts += alive
            current = next_node
            if not alive.any():
                break
        return counts

    @staticmethod
    def simulate_expected_tokens(topology: TreeTopology, p: AcceptanceVector, trials: int,
                                 rng: np.random.Generator) -> float:
        """Monte Carlo estimate of expected_tokens."""
        return float(TreeMetrics.simulate_trials(topology, p, trials, rng).mean())
