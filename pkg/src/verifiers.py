"""
Verification Module
Node-level sampling/verification algorithms, the recursive tree verifier,
the sequence-based baseline and an exhaustive enumeration oracle.
"""

import logging
import numpy as np
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

from src.categorical import Categorical, CategoricalOps, DEGENERACY_EPS
from src.errors import (
    DegenerateVector,
    InsufficientSupport,
    InvalidParameter,
    MismatchedChildren,
    TooLarge,
    TopologyMismatch,
    UnsupportedVerifier,
)
from src.tree import TreeTopology

if TYPE_CHECKING:
    from src.toy_models import ToyLM

logger = logging.getLogger(__name__)


class VerifierKind(Enum):
    """Tree sampling and verification methods."""

    SEQUOIA = 'sequoia'
    SPECINFER = 'specinfer'
    TOPK = 'topk'

    @classmethod
    def parse(cls, name: str) -> 'VerifierKind':
        """
        Parse a verifier name as used on the command line.

        Raises:
            UnsupportedVerifier: for unknown names, or for methods that are
                deliberately not implemented such as "spectr"
        """
        key = str(name).strip().lower()
        if key == 'spectr':
            raise UnsupportedVerifier("Verifier 'spectr' is unsupported")
        for kind in cls:
            if kind.value == key:
                return kind
        raise UnsupportedVerifier(
            f"Unknown verifier '{name}'; choose from {', '.join(k.value for k in cls)}")

    def draw_children(self, Q: Categorical, k: int, rng: np.random.Generator) -> List[int]:
        """Speculated child tokens in rank order for this verifier."""
        if self is VerifierKind.SEQUOIA:
            return CategoricalOps.draft_order(Q, k, rng)
        if self is VerifierKind.SPECINFER:
            return [CategoricalOps.sample(Q, rng) for _ in range(k)]
        return CategoricalOps.top_k(Q, k)


@dataclass(frozen=True)
class NodeOutcome:
    """
    Result of verifying the children of one node.

    Attributes:
        accepted: Token emitted at this position
        accepted_child_rank: 1-based rank of the accepted child, None when the
            token was sampled from the residual/target instead
        draws_used: Accept/reject tests (or target draws) consumed
    """

    accepted: int
    accepted_child_rank: Optional[int]
    draws_used: int


@dataclass(frozen=True)
class VerifiedResult:
    """Outcome of one tree verification step."""

    accepted_path: Tuple[int, ...]
    bonus_token: int
    tokens_generated: int
    accepted_nodes: Tuple[int, ...] = ()

    @property
    def tokens(self) -> List[int]:
        return list(self.accepted_path) + [self.bonus_token]


class TreeVerifier:
    """
    Verification algorithms for speculated token trees.
    """

    @staticmethod
    def _check_distinct(children: Sequence[int]):
        if len(set(children)) != len(children):
            raise MismatchedChildren(f"Children must be distinct, got {list(children)}")

    @staticmethod
    def sequoia_node_verify(P: Categorical, Q: Categorical, children: Sequence[int],
                            rng: np.random.Generator) -> NodeOutcome:
        """
        Sequoia sampling and verification at one node.

        Child x_i is accepted with probability min(1, R[x_i]/D[x_i]); R starts
        at P and D at Q. After a rejection R becomes norm(max(R - D, 0)), D
        drops x_i and is renormalized (uniform over the non-rejected tokens
        if nothing is left). If every child is rejected the token is drawn
        from the final R.

        Args:
            P: Target distribution at the node
            Q: Draft distribution at the node
            children: Distinct tokens, as drawn by CategoricalOps.draft_order(Q, k)
            rng: Seeded generator

        Returns:
            NodeOutcome
        """
        TreeVerifier._check_distinct(children)
        if len(children) > P.vocab_size:
            raise InsufficientSupport(f"{len(children)} children exceed vocabulary size {P.vocab_size}")
        R = P.probs.copy()
        D = Q.probs.copy()
        rejected: List[int] = []

        for rank, x in enumerate(children, start=1):
            if D[x] <= 0:
                raise MismatchedChildren(
                    f"Child {x} at rank {rank} has zero draft probability; "
                    "children were not drawn without replacement from Q")
            if rng.random() < R[x] / D[x]:
                return NodeOutcome(int(x), rank, rank)
            try:
                R = CategoricalOps.residual_weights(R, D)
            except DegenerateVector:
                logger.debug("Degenerate residual at rank %d; accepting token %d", rank, x)
                return NodeOutcome(int(x), rank, rank)
            D[x] = 0.0
            rejected.append(x)
            total = D.sum()
            if total <= DEGENERACY_EPS:
                D = CategoricalOps.uniform_over(rejected, P.vocab_size).probs.copy()
            else:
                D = D / total

        return NodeOutcome(CategoricalOps.sample_index(R, rng), None, len(children))

    @staticmethod
    def specinfer_node_verify(P: Categorical, Q: Categorical, children: Sequence[int],
                              rng: np.random.Generator) -> NodeOutcome:
        """
        SpecInfer verification: same test, but D stays equal to Q throughout.

        Args:
            P: Target distribution at the node
            Q: Draft distribution at the node
            children: i.i.d. draws from Q (duplicates allowed)
            rng: Seeded generator

        Returns:
            NodeOutcome
        """
        R = P.probs.copy()
        D = Q.probs
        for rank, x in enumerate(children, start=1):
            if D[x] <= 0:
                raise MismatchedChildren(f"Child {x} at rank {rank} has zero draft probability")
            if rng.random() < R[x] / D[x]:
                return NodeOutcome(int(x), rank, rank)
            try:
                R = CategoricalOps.residual_weights(R, D)
            except DegenerateVector:
                logger.debug("Degenerate residual at rank %d; accepting token %d", rank, x)
                return NodeOutcome(int(x), rank, rank)
        return NodeOutcome(CategoricalOps.sample_index(R, rng), None, len(children))

    @staticmethod
    def topk_node_verify(P: Categorical, children: Sequence[int],
                         rng: np.random.Generator) -> NodeOutcome:
        """
        Naive verification: sample x ~ P and accept it if it was speculated.
        """
        TreeVerifier._check_distinct(children)
        x = CategoricalOps.sample(P, rng)
        if x in children:
            return NodeOutcome(x, list(children).index(x) + 1, 1)
        return NodeOutcome(x, None, 1)

    @staticmethod
    def node_verify(kind: VerifierKind, P: Categorical, Q: Optional[Categorical],
                    children: Sequence[int], rng: np.random.Generator) -> NodeOutcome:
        """Dispatch to the node verifier for `kind`."""
        if kind is VerifierKind.SEQUOIA:
            return TreeVerifier.sequoia_node_verify(P, Q, children, rng)
        elif kind is VerifierKind.SPECINFER:
            return TreeVerifier.specinfer_node_verify(P, Q, children, rng)
        elif kind is VerifierKind.TOPK:
            return TreeVerifier.topk_node_verify(P, children, rng)
        raise UnsupportedVerifier(f"Unknown verifier: {kind}")

    @staticmethod
    def verify_tree(topology: TreeTopology, node_tokens: Sequence[int],
                    draft_dists: Sequence[Optional[Categorical]],
                    target_dists: Sequence[Categorical], kind: VerifierKind,
                    rng: np.random.Generator) -> VerifiedResult:
        """
        Verify a speculated tree starting at the root.

        Each accepted node's children are verified against the target
        conditional at that node; the walk stops at the first node whose
        children are all rejected (or at a leaf) and emits a bonus token.
        Node v uses its own generator seeded from (master, v), where master is
        drawn once from `rng`.

        Args:
            topology: Tree shape
            node_tokens: Token per node (the root entry is not emitted)
            draft_dists: Draft conditional per node (None allowed at leaves)
            target_dists: Target conditional per node
            kind: Verification algorithm
            rng: Seeded generator

        Returns:
            VerifiedResult
        """
        n = topology.size
        if not (len(node_tokens) == len(draft_dists) == len(target_dists) == n):
            raise TopologyMismatch(
                f"Tree has {n} nodes but got {len(node_tokens)} tokens, "
                f"{len(draft_dists)} draft and {len(target_dists)} target distributions")
        master = int(rng.integers(2 ** 63))

        v = 0
        path: List[int] = []
        nodes: List[int] = []
        while True:
            node_rng = np.random.default_rng(np.random.SeedSequence([master, v]))
            kids = topology.children(v)
            if not kids:
                bonus = CategoricalOps.sample(target_dists[v], node_rng)
                break
            Q = draft_dists[v]
            if Q is None and kind is not VerifierKind.TOPK:
                raise TopologyMismatch(f"Internal node {v} has no draft distribution")
            outcome = TreeVerifier.node_verify(
                kind, target_dists[v], Q, [node_tokens[c] for c in kids], node_rng)
            if outcome.accepted_child_rank is None:
                bonus = outcome.accepted
                break
            v = kids[outcome.accepted_child_rank - 1]
            path.append(int(node_tokens[v]))
            nodes.append(v)

        return VerifiedResult(tuple(path), int(bonus), len(path) + 1, tuple(nodes))

    @staticmethod
    def sequence_spec_decode(draft: 'ToyLM', target: 'ToyLM', prefix: Sequence[int],
                             gamma: int, rng: np.random.Generator) -> List[int]:
        """
        One step of sequence-based speculative decoding.

        Drafts gamma tokens autoregressively, accepts each with probability
        min(1, p(x)/q(x)) and on the first rejection samples from the
        residual. If all are accepted one more token comes from the target.

        Args:
            draft: Draft model
            target: Target model
            prefix: Context tokens
            gamma: Speculation length, >= 1
            rng: Seeded generator

        Returns:
            Tokens generated this step (between 1 and gamma + 1)
        """
        if gamma < 1:
            raise InvalidParameter("gamma must be >= 1")
        context = list(prefix)
        drafted: List[int] = []
        draft_dists: List[Categorical] = []
        for _ in range(gamma):
            q = draft.conditional(context + drafted)
            draft_dists.append(q)
            drafted.append(CategoricalOps.sample(q, rng))

        out: List[int] = []
        for x, q in zip(drafted, draft_dists):
            p = target.conditional(context + out)
            if rng.random() < p[x] / q[x]:
                out.append(x)
                continue
            try:
                r = CategoricalOps.residual_weights(p.probs, q.probs)
            except DegenerateVector:
                out.append(x)
                continue
            out.append(CategoricalOps.sample_index(r, rng))
            return out

        out.append(CategoricalOps.sample(target.conditional(context + out), rng))
        return out


def expected_tokens_sequence(alpha: float, gamma: int) -> float:
    """Expected tokens per step of sequence decoding: (1 - a^(g+1)) / (1 - a)."""
    if alpha >= 1.0:
        return float(gamma + 1)
    return (1.0 - alpha ** (gamma + 1)) / (1.0 - alpha)


def sequence_speedup(alpha: float, gamma: int, c: float) -> float:
    """Walltime improvement of sequence decoding with draft/verify cost ratio c."""
    return expected_tokens_sequence(alpha, gamma) / (gamma * c + 1.0)


@dataclass(frozen=True)
class ExactNodeResult:
    """Exact output distribution and per-rank acceptance of one node verifier."""

    output: Categorical
    rank_acceptance: np.ndarray

    @property
    def acceptance(self) -> float:
        return float(self.rank_acceptance.sum())


class ExactNodeOracle:
    """
    Exhaustive enumeration of node verification.

    Accept thresholds are integrated analytically, so the only branching is
    over which token is drawn at each rank. Rejection branches carrying less
    than PRUNE_MASS probability are dropped; the lost mass stays far below
    the 1e-9 comparison tolerance.
    """

    MAX_VOCAB = 8
    PRUNE_MASS = 1e-18

    def __init__(self, node_budget: int = 200_000):
        """
        Args:
            node_budget: Maximum number of enumerated draw states
        """
        self.node_budget = node_budget

    def exact_node_distribution(self, P: Categorical, Q: Categorical, k: int,
                                kind: VerifierKind) -> ExactNodeResult:
        """
        Exact output distribution and acceptance probability per child rank.

        Args:
            P: Target distribution
            Q: Draft distribution
            k: Number of speculated children
            kind: Verification algorithm

        Returns:
            ExactNodeResult

        Raises:
            TooLarge: if the vocabulary exceeds 8 or enumeration exceeds the budget
        """
        V = P.vocab_size
        if V > self.MAX_VOCAB:
            raise TooLarge(f"Exact enumeration supports vocabularies up to {self.MAX_VOCAB}, got {V}")
        if Q.vocab_size != V:
            raise MismatchedChildren(f"Vocabulary mismatch: {V} vs {Q.vocab_size}")
        if k < 0:
            raise InvalidParameter("k must be >= 0")
        if k == 0:
            return ExactNodeResult(P, np.zeros(0))
        if kind is VerifierKind.SEQUOIA:
            if k > V:
                raise InsufficientSupport(f"{k} distinct children exceed vocabulary size {V}")
            out, acc = self._sequoia(P.probs, Q.probs, k)
        elif kind is VerifierKind.SPECINFER:
            out, acc = self._specinfer(P.probs, Q.probs, k)
        elif kind is VerifierKind.TOPK:
            if k > V:
                raise InsufficientSupport(f"{k} distinct children exceed vocabulary size {V}")
            out, acc = self._topk(P.probs, Q, k)
        else:
            raise UnsupportedVerifier(f"Unknown verifier: {kind}")
        return ExactNodeResult(Categorical(out), acc)

    def _sequoia(self, P: np.ndarray, Q: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        V = P.size
        out = np.zeros(V)
        acc = np.zeros(k)
        visited = 0
        # (R, D, rejected, weight, rank)
        stack = [(P.copy(), Q.copy(), (), 1.0, 1)]
        while stack:
            R, D, rejected, weight, rank = stack.pop()
            visited += 1
            if visited > self.node_budget:
                raise TooLarge(f"Enumeration exceeded node budget {self.node_budget}")
            if rank > k:
                out += weight * R
                continue
            try:
                R_next = CategoricalOps.residual_weights(R, D)
            except DegenerateVector:
                R_next = None
            for x in np.flatnonzero(D > 0):
                w = weight * D[x]
                a = min(1.0, R[x] / D[x])
                out[x] += w * a
                acc[rank - 1] += w * a
                rej = w * (1.0 - a)
                if rej <= self.PRUNE_MASS:
                    continue
                if R_next is None:
                    out[x] += rej
                    acc[rank - 1] += rej
                    continue
                D_next = D.copy()
                D_next[x] = 0.0
                now_rejected = rejected + (int(x),)
                total = D_next.sum()
                if total <= DEGENERACY_EPS:
                    D_next = CategoricalOps.uniform_over(now_rejected, V).probs.copy()
                else:
                    D_next = D_next / total
                stack.append((R_next, D_next, now_rejected, rej, rank + 1))
        return out, acc

    def _specinfer(self, P: np.ndarray, Q: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        # D never changes and the residual does not depend on the rejected
        # token, so the enumeration collapses to one state per rank.
        out = np.zeros(P.size)
        acc = np.zeros(k)
        R = P.copy()
        weight = 1.0
        ratio_mask = Q > 0
        for rank in range(1, k + 1):
            a = np.zeros_like(Q)
            a[ratio_mask] = np.minimum(1.0, R[ratio_mask] / Q[ratio_mask])
            accept = weight * Q * a
            out += accept
            acc[rank - 1] = accept.sum()
            reject = weight * Q * (1.0 - a)
            weight = reject.sum()
            if weight <= 0:
                return out, acc
            try:
                R = CategoricalOps.residual_weights(R, Q)
            except DegenerateVector:
                out += reject
                acc[rank - 1] += weight
                return out, acc
        out += weight * R
        return out, acc

    def _topk(self, P: np.ndarray, Q: Categorical, k: int) -> Tuple[np.ndarray, np.ndarray]:
        children = CategoricalOps.top_k(Q, k)
        out = np.zeros(P.size)
        acc = np.array([P[c] for c in children])
        out[children] = P[children]
        rest = np.ones(P.size, dtype=bool)
        rest[children] = False
        out[rest] += P[rest]
        return out, acc
