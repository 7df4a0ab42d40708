"""
Error Types
Exception hierarchy shared by every module of the speculative decoding lab.
"""


class SequoiaLabError(ValueError):
    """
    Base class for invalid-input and unsatisfiable-request errors.

    The command line maps these to exit code 2.
    """


class InvalidDistribution(SequoiaLabError):
    """A probability vector is negative, empty or does not sum to one."""


class DegenerateVector(SequoiaLabError):
    """A nonnegative vector has (numerically) zero mass and cannot be normalized."""


class InsufficientSupport(SequoiaLabError):
    """More distinct tokens were requested than the distribution can supply."""


class EmptySupport(SequoiaLabError):
    """Every token of the vocabulary has been excluded."""


class MismatchedChildren(SequoiaLabError):
    """Speculated children are inconsistent with the verifier's sampling scheme."""


class TopologyMismatch(SequoiaLabError):
    """Per-node data does not line up with the tree topology."""


class InvalidTopology(SequoiaLabError):
    """A parent/rank description is not a canonical breadth-first token tree."""


class RankOutOfRange(SequoiaLabError):
    """A child rank exceeds the length of the acceptance vector."""


class InvalidAcceptanceVector(SequoiaLabError):
    """Acceptance probabilities are out of range, increasing, or sum above one."""


class ParseError(SequoiaLabError):
    """Malformed serialized input."""


class InvalidParameter(SequoiaLabError):
    """A numeric or named option lies outside its allowed range."""


class TooLarge(SequoiaLabError):
    """An exhaustive oracle was asked for more work than its budget allows."""


class Infeasible(SequoiaLabError):
    """No tree satisfies the requested size/depth/branch constraints."""


class MissingBaseline(SequoiaLabError):
    """Cost measurements lack the n=1 verification baseline (or are too few)."""


class UnreachableDivergence(SequoiaLabError):
    """A toy model pair cannot reach the requested draft/target divergence."""


class UnsupportedVerifier(SequoiaLabError):
    """Unknown or out-of-scope verification algorithm name."""


class DegenerateFit(SequoiaLabError):
    """
    Power-law fit impossible because a rejection rate reached zero.

    Attributes:
        rank: First rank k with r_k = 0 (the cover rank)
    """

    def __init__(self, message: str, rank: int):
        super().__init__(message)
        self.rank = rank


class InvariantViolation(RuntimeError):
    """An internal consistency check failed. The command line exits with code 3."""
