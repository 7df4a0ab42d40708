"""
Categorical Distribution Module
Finite probability vectors, residual arithmetic and the sampling primitives
used by every verifier.
"""

import json
import logging
import numpy as np
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Set

from src.errors import (
    DegenerateVector,
    EmptySupport,
    InsufficientSupport,
    InvalidDistribution,
    ParseError,
)

logger = logging.getLogger(__name__)

# Mass at or below this is treated as zero when normalizing
DEGENERACY_EPS = 1e-12
# Allowed deviation of sum(probs) from 1 on construction
PROB_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Categorical:
    """
    Probability vector over token ids 0..V-1.

    The backing array is read-only so instances can be shared across threads.
    """

    probs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.probs, dtype=float)
        if arr.ndim != 1:
            raise InvalidDistribution("Probabilities must be a 1-D vector")
        if arr.size == 0:
            raise InvalidDistribution("Distribution needs at least one token")
        if not np.all(np.isfinite(arr)):
            raise InvalidDistribution("Probabilities must be finite")
        if np.any(arr < 0):
            raise InvalidDistribution(f"Negative probability {arr.min():.3g}")
        total = arr.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise InvalidDistribution(
                f"Probabilities sum to {total:.12g}, expected 1 within {PROB_TOL}")
        arr.flags.writeable = False
        object.__setattr__(self, 'probs', arr)

    @property
    def vocab_size(self) -> int:
        return int(self.probs.size)

    def support(self) -> np.ndarray:
        """Token ids with positive probability."""
        return np.flatnonzero(self.probs > 0)

    def __getitem__(self, token: int) -> float:
        return float(self.probs[token])

    def __len__(self) -> int:
        return self.vocab_size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Categorical):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.array_equal(self.probs, other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def allclose(self, other: 'Categorical', atol: float = 1e-9) -> bool:
        return self.vocab_size == other.vocab_size and bool(
            np.allclose(self.probs, other.probs, rtol=0.0, atol=atol))

    @classmethod
    def point_mass(cls, token: int, vocab_size: int) -> 'Categorical':
        probs = np.zeros(vocab_size)
        probs[token] = 1.0
        return cls(probs)

    @classmethod
    def from_logits(cls, logits: Sequence[float], temperature: float = 1.0) -> 'Categorical':
        """
        Softmax with temperature.

        Args:
            logits: Unnormalized log-probabilities
            temperature: Divides the logits; must be > 0

        Returns:
            Categorical distribution
        """
        if temperature <= 0:
            raise InvalidDistribution("Temperature must be positive")
        z = np.asarray(logits, dtype=float) / temperature
        z = z - z.max()
        weights = np.exp(z)
        return cls(weights / weights.sum())

    def to_json(self) -> str:
        return json.dumps([float(x) for x in self.probs])

    @classmethod
    def from_json(cls, text: str) -> 'Categorical':
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"Invalid categorical JSON: {exc}") from exc
        if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
            raise ParseError("Categorical JSON must be an array of numbers")
        return cls(np.asarray(values, dtype=float))


class CategoricalOps:
    """
    Pure operations on categorical distributions.

    Every stochastic method takes an explicit numpy Generator.
    """

    @staticmethod
    def normalize(v: Iterable[float]) -> Categorical:
        """
        Scale a nonnegative vector to sum to one.

        Args:
            v: Nonnegative weights

        Returns:
            Categorical proportional to v

        Raises:
            DegenerateVector: if the total mass is at most 1e-12
        """
        arr = np.asarray(v, dtype=float).reshape(-1)
        if arr.size == 0:
            raise InvalidDistribution("Cannot normalize an empty vector")
        if np.any(arr < 0):
            raise InvalidDistribution("Cannot normalize a vector with negative entries")
        total = arr.sum()
        if total <= DEGENERACY_EPS:
            raise DegenerateVector(f"Vector mass {total:.3g} is too small to normalize")
        return Categorical(arr / total)

    @staticmethod
    def residual_weights(R: np.ndarray, D: np.ndarray) -> np.ndarray:
        """
        Normalized positive part of R - D on raw arrays.

        Raises:
            DegenerateVector: when R <= D entrywise (up to 1e-12 total mass)
        """
        diff = np.maximum(R - D, 0.0)
        total = diff.sum()
        if total <= DEGENERACY_EPS:
            raise DegenerateVector("Residual has no remaining mass")
        return diff / total

    @staticmethod
    def residual(R: Categorical, D: Categorical) -> Categorical:
        """
        Residual distribution norm(max(R - D, 0)).

        Args:
            R: Current target-side distribution
            D: Current draft-side distribution

        Returns:
            Residual Categorical whose support is contained in R's
        """
        if R.vocab_size != D.vocab_size:
            raise InvalidDistribution(
                f"Vocabulary mismatch: {R.vocab_size} vs {D.vocab_size}")
        return Categorical(CategoricalOps.residual_weights(R.probs, D.probs))

    @staticmethod
    def tv_distance(P: Categorical, Q: Categorical) -> float:
        """Total variation distance, half the L1 norm of P - Q."""
        if P.vocab_size != Q.vocab_size:
            raise InvalidDistribution(
                f"Vocabulary mismatch: {P.vocab_size} vs {Q.vocab_size}")
        return float(min(1.0, 0.5 * np.abs(P.probs - Q.probs).sum()))

    @staticmethod
    def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
        """Inverse-CDF draw from a raw probability array (zero entries never drawn)."""
        cdf = np.cumsum(probs)
        u = rng.random() * cdf[-1]
        token = int(np.searchsorted(cdf, u, side='right'))
        if token >= probs.size or probs[token] <= 0:
            token = int(np.flatnonzero(probs > 0)[-1])
        return token

    @staticmethod
    def sample(dist: Categorical, rng: np.random.Generator) -> int:
        """
        Draw one token.

        Args:
            dist: Distribution to draw from
            rng: Seeded generator

        Returns:
            Token id drawn with probability dist[token]
        """
        return CategoricalOps.sample_index(dist.probs, rng)

    @staticmethod
    def sample_without_replacement(dist: Categorical, m: int,
                                   rng: np.random.Generator) -> List[int]:
        """
        Ordered draw of m distinct tokens by exponential sort.

        Each support token gets key E/p with E ~ Exp(1); sorting the keys once
        yields the same law as drawing sequentially, removing the drawn token
        and renormalizing.

        Args:
            dist: Distribution to draw from
            m: Number of distinct tokens
            rng: Seeded generator

        Returns:
            List of m distinct token ids in draw order
        """
        support = dist.support()
        if m < 0:
            raise InsufficientSupport("Cannot draw a negative number of tokens")
        if m > support.size:
            raise InsufficientSupport(
                f"Requested {m} distinct tokens but support has only {support.size}")
        keys = rng.exponential(size=support.size) / dist.probs[support]
        order = np.argsort(keys, kind='stable')[:m]
        return [int(t) for t in support[order]]

    @staticmethod
    def uniform_over(excluded: Iterable[int], vocab_size: int) -> Categorical:
        """
        Uniform distribution over tokens not in `excluded`.

        Raises:
            EmptySupport: if every token is excluded
        """
        mask = np.ones(vocab_size, dtype=bool)
        excluded_ids = [int(t) for t in excluded]
        if excluded_ids:
            mask[excluded_ids] = False
        remaining = int(mask.sum())
        if remaining == 0:
            raise EmptySupport(f"All {vocab_size} tokens are excluded")
        return Categorical(mask / remaining)

    @staticmethod
    def draft_order(Q: Categorical, k: int, rng: np.random.Generator) -> List[int]:
        """
        Children for Sequoia verification.

        Samples without replacement over support(Q); once the support is
        exhausted the remaining tokens follow in uniformly random order,
        which is what the uniform-over-non-rejected fallback draws.

        Args:
            Q: Draft distribution at the node
            k: Number of children, at most V
            rng: Seeded generator

        Returns:
            k distinct token ids
        """
        if k > Q.vocab_size:
            raise InsufficientSupport(
                f"Requested {k} distinct tokens from a vocabulary of {Q.vocab_size}")
        support = Q.support()
        if k <= support.size:
            return CategoricalOps.sample_without_replacement(Q, k, rng)
        head = CategoricalOps.sample_without_replacement(Q, support.size, rng)
        rest: Set[int] = set(range(Q.vocab_size)) - set(head)
        tail = rng.permutation(np.array(sorted(rest)))[:k - support.size]
        return head + [int(t) for t in tail]

    @staticmethod
    def top_k(Q: Categorical, k: int) -> List[int]:
        """The k highest-probability tokens, ties broken by smaller id."""
        if k > Q.vocab_size:
            raise InsufficientSupport(
                f"Requested {k} distinct tokens from a vocabulary of {Q.vocab_size}")
        return [int(t) for t in np.argsort(-Q.probs, kind='stable')[:k]]

    @staticmethod
    def top_p(dist: Categorical, p: float) -> Categorical:
        """
        Nucleus truncation: keep the smallest set of most likely tokens whose
        mass reaches p, then renormalize.

        Args:
            dist: Distribution to truncate
            p: Mass threshold in (0, 1]; 1 keeps the full support

        Returns:
            Truncated Categorical over the same vocabulary
        """
        if not 0.0 < p <= 1.0:
            raise InvalidDistribution(f"top-p threshold {p} is outside (0, 1]")
        order = np.argsort(-dist.probs, kind='stable')
        cumulative = np.cumsum(dist.probs[order])
        # first prefix reaching p, with slack for rounding in the cumulative sum
        keep = int(np.searchsorted(cumulative, p - PROB_TOL)) + 1
        weights = np.zeros(dist.vocab_size)
        kept = order[:min(keep, dist.vocab_size)]
        weights[kept] = dist.probs[kept]
        return CategoricalOps.normalize(weights)
