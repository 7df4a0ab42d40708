"""
Acceptance Estimation Module
Measures positional acceptance vectors of a draft/target pair and fits the
power-law decay of the rejection curve.
"""

import logging
import numpy as np
import pandas as pd
from dataclasses import dataclass
from scipy.stats import linregress
from typing import Dict, List, Optional, Sequence

from src.errors import DegenerateFit, InsufficientSupport, InvalidParameter
from src.toy_models import ToyLM
from src.tree import AcceptanceVector
from src.verifiers import ExactNodeOracle, TreeVerifier, VerifierKind

logger = logging.getLogger(__name__)

# Monte Carlo trials per context when the vocabulary is too large to enumerate
FALLBACK_TRIALS = 2000


def fit_power_law(r: Sequence[float]) -> float:
    """
    Exponent b of r_k ~ k^(-b) by least squares on the log-log curve.

    Args:
        r: Rejection rates r_1..r_K, K >= 3

    Returns:
        Fitted exponent b (negated slope)

    Raises:
        DegenerateFit: if some r_k is zero; the exception carries that rank
    """
    rates = np.asarray(r, dtype=float)
    if rates.size < 3:
        raise InvalidParameter("Power-law fit needs at least 3 points")
    zeros = np.flatnonzero(rates <= 0)
    if zeros.size:
        rank = int(zeros[0]) + 1
        raise DegenerateFit(f"Rejection rate reaches zero at k={rank}", rank)
    k = np.arange(1, rates.size + 1, dtype=float)
    return float(-linregress(np.log(k), np.log(rates)).slope)


@dataclass(frozen=True)
class EstimationReport:
    """
    Estimated positional acceptance for one verifier.

    Attributes:
        kind: Verifier measured
        per_rank: Mean probability that rank i is the accepted child (unsorted)
        p: Acceptance vector for planning (per_rank sorted descending)
        r: Rejection rates 1 - cumulative(per_rank)
        variance: Across-context variance of each per-rank estimate
        sample_counts: Samples behind each position (contexts x trials)
        b: Fitted power-law exponent, None when fewer than 3 usable points
        cover_rank: First k with r_k = 0, if any
        exact: Whether per-context values were computed exactly
        trials: Monte Carlo trials per context, 0 when exact
    """

    kind: VerifierKind
    per_rank: np.ndarray
    p: AcceptanceVector
    r: np.ndarray
    variance: np.ndarray
    sample_counts: np.ndarray
    b: Optional[float]
    cover_rank: Optional[int]
    exact: bool
    trials: int = 0

    @property
    def method(self) -> str:
        return 'exact' if self.exact else 'monte-carlo'

    @property
    def kmax(self) -> int:
        return int(self.per_rank.size)

    def to_dict(self) -> Dict:
        return {
            'verifier': self.kind.value,
            'exact': self.exact,
            'method': self.method,
            'trials': self.trials,
            'kmax': self.kmax,
            'p': self.p.to_list(),
            'per_rank': [float(x) for x in self.per_rank],
            'r': [float(x) for x in self.r],
            'variance': [float(x) for x in self.variance],
            'sample_counts': [int(x) for x in self.sample_counts],
            'b': self.b,
            'cover_rank': self.cover_rank,
        }

    def rejection_curve(self) -> pd.DataFrame:
        """Plot-ready rejection curve, one row per k."""
        return pd.DataFrame({
            'k': np.arange(1, self.kmax + 1),
            'p_k': self.per_rank,
            'r_k': self.r,
            'variance': self.variance,
            'samples': self.sample_counts,
        })


class AcceptanceEstimator:
    """
    Estimates the acceptance vector of a verifier on a draft/target pair.
    """

    def __init__(self, draft: ToyLM, target: ToyLM, oracle: Optional[ExactNodeOracle] = None):
        """
        Args:
            draft: Draft model
            target: Target model
            oracle: Exact enumerator used when the vocabulary is small
        """
        if draft.vocab_size != target.vocab_size:
            raise InvalidParameter("Draft and target vocabularies differ")
        self.draft = draft
        self.target = target
        self.oracle = oracle or ExactNodeOracle()

    def contexts(self, prompts: Optional[Sequence[Sequence[int]]] = None) -> List[List[int]]:
        if prompts is not None:
            return [list(p) for p in prompts]
        return [list(c) for c in self.target.contexts()]

    def per_context_acceptance(self, kind: VerifierKind, context: Sequence[int], kmax: int,
                               trials: int = 0,
                               rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Probability that rank i is the accepted child at one context.

        Exact when trials == 0, Monte Carlo over `trials` node verifications otherwise.
        """
        P = self.target.conditional(context)
        Q = self.draft.conditional(context)
        if trials == 0:
            return self.oracle.exact_node_distribution(P, Q, kmax, kind).rank_acceptance
        if rng is None:
            raise InvalidParameter("Monte Carlo estimation needs an rng")
        counts = np.zeros(kmax)
        for _ in range(trials):
            children = kind.draw_children(Q, kmax, rng)
            outcome = TreeVerifier.node_verify(kind, P, Q, children, rng)
            if outcome.accepted_child_rank is not None:
                counts[outcome.accepted_child_rank - 1] += 1
        return counts / trials

    def estimate(self, kind: VerifierKind, kmax: int,
                 prompts: Optional[Sequence[Sequence[int]]] = None, trials: int = 0,
                 rng: Optional[np.random.Generator] = None) -> EstimationReport:
        """
        Average per-rank acceptance over contexts.

        Args:
            kind: Verifier to measure
            kmax: Number of ranks, at most V
            prompts: Contexts to measure; defaults to every model context
            trials: 0 for exact enumeration, else Monte Carlo trials per context.
                Vocabularies above ExactNodeOracle.MAX_VOCAB fall back to
                FALLBACK_TRIALS when 0
            rng: Seeded generator, required for Monte Carlo

        Returns:
            EstimationReport
        """
        V = self.target.vocab_size
        if kmax < 1 or kmax > V:
            raise InsufficientSupport(f"kmax={kmax} must lie in [1, {V}]")
        if trials < 0:
            raise InvalidParameter("trials must be >= 0")
        if trials == 0 and V > ExactNodeOracle.MAX_VOCAB:
            trials = FALLBACK_TRIALS
            logger.info("V=%d is too large to enumerate; using %d Monte Carlo trials per context",
                        V, trials)
        if trials > 0 and rng is None:
            raise InvalidParameter("Monte Carlo estimation needs an rng")
        contexts = self.contexts(prompts)
        rows = np.array([
            self.per_context_acceptance(kind, ctx, kmax, trials, rng) for ctx in contexts
        ])
        per_rank = rows.mean(axis=0)
        variance = rows.var(axis=0)
        r = np.clip(1.0 - np.cumsum(per_rank), 0.0, 1.0)
        r[r < 1e-12] = 0.0
        r = np.minimum.accumulate(r)

        b, cover_rank = None, None
        try:
            if r.size >= 3:
                b = fit_power_law(r)
        except DegenerateFit as exc:
            cover_rank = exc.rank
            if exc.rank - 1 >= 3:
                b = fit_power_law(r[:exc.rank - 1])
        if cover_rank is None and np.any(r == 0):
            cover_rank = int(np.flatnonzero(r == 0)[0]) + 1

        samples = np.full(kmax, len(contexts) * max(trials, 1), dtype=np.int64)
        report = EstimationReport(
            kind=kind,
            per_rank=per_rank,
            p=AcceptanceVector.sorted_from(np.clip(per_rank, 0.0, 1.0)),
            r=r,
            variance=variance,
            sample_counts=samples,
            b=b,
            cover_rank=cover_rank,
            exact=trials == 0,
            trials=trials,
        )
        logger.info("Estimated %s acceptance over %d contexts: P_k=%.4f",
                    kind.value, len(contexts), float(per_rank.sum()))
        return report


def estimate_acceptance_vector(draft: ToyLM, target: ToyLM, kind: VerifierKind, kmax: int,
                               prompts: Optional[Sequence[Sequence[int]]] = None,
                               trials: int = 0,
                               rng: Optional[np.random.Generator] = None) -> EstimationReport:
    """Convenience wrapper around AcceptanceEstimator.estimate."""
    return AcceptanceEstimator(draft, target).estimate(kind, kmax, prompts, trials, rng)
