"""
Toy Language Model Module
Seedable order-m Markov models standing in for draft/target model pairs.
"""

import json
import logging
import numpy as np
import pandas as pd
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from src.categorical import Categorical, CategoricalOps
from src.errors import InvalidDistribution, InvalidParameter, ParseError, UnreachableDivergence

logger = logging.getLogger(__name__)

DIVERGENCE_TOL = 0.05
BUNDLE_FORMAT = 'sequoia-lab/model-pair'


class ToyLM:
    """
    Order-m Markov language model over token ids 0..V-1.

    The conditional table is keyed by the last m tokens read as a base-V
    number; prefixes shorter than m use the order-0 marginal.
    """

    def __init__(self, order: int, vocab_size: int, tables: np.ndarray,
                 marginal: Optional[np.ndarray] = None, seed: Optional[int] = None):
        """
        Initialize the model.

        Args:
            order: Context length m >= 0
            vocab_size: Vocabulary size V >= 1
            tables: Array of shape (V**m, V), one conditional per context
            marginal: Order-0 fallback; defaults to the mean conditional
            seed: Seed the tables were generated from (recorded, not used)
        """
        if order < 0:
            raise InvalidParameter("order must be >= 0")
        if vocab_size < 1:
            raise InvalidParameter("vocab_size must be >= 1")
        tables = np.asarray(tables, dtype=float)
        if tables.shape != (vocab_size ** order, vocab_size):
            raise InvalidDistribution(
                f"Expected tables of shape {(vocab_size ** order, vocab_size)}, got {tables.shape}")
        if marginal is None:
            marginal = tables.mean(axis=0)
            marginal = marginal / marginal.sum()

        self.order = order
        self.vocab_size = vocab_size
        self.seed = seed
        self._conditionals = [Categorical(row) for row in tables]
        self._marginal = Categorical(marginal)

    @property
    def n_contexts(self) -> int:
        return len(self._conditionals)

    @property
    def marginal(self) -> Categorical:
        return self._marginal

    @property
    def tables(self) -> np.ndarray:
        return np.vstack([c.probs for c in self._conditionals])

    def context_index(self, context: Sequence[int]) -> int:
        index = 0
        for token in context[len(context) - self.order:] if self.order else ():
            index = index * self.vocab_size + int(token)
        return index

    def context_tokens(self, index: int) -> Tuple[int, ...]:
        tokens = []
        for _ in range(self.order):
            index, token = divmod(index, self.vocab_size)
            tokens.append(token)
        return tuple(reversed(tokens))

    def contexts(self) -> Iterator[Tuple[int, ...]]:
        """Every full-length context, in table order."""
        for index in range(self.n_contexts):
            yield self.context_tokens(index)

    def conditional(self, prefix: Sequence[int]) -> Categorical:
        """
        Next-token distribution after `prefix`.

        Args:
            prefix: Tokens generated so far

        Returns:
            Categorical over the vocabulary
        """
        if len(prefix) < self.order:
            return self._marginal
        return self._conditionals[self.context_index(prefix)]

    def generate(self, prompt: Sequence[int], length: int,
                 rng: np.random.Generator) -> List[int]:
        """Plain autoregressive sampling of `length` tokens."""
        tokens = list(prompt)
        for _ in range(length):
            tokens.append(CategoricalOps.sample(self.conditional(tokens), rng))
        return tokens[len(prompt):]

    @classmethod
    def from_token_stream(cls, tokens: Sequence[int], order: int, vocab_size: int,
                          smoothing: float = 1.0) -> 'ToyLM':
        """
        Fit a model by counting (context, next token) pairs.

        Args:
            tokens: Training sequence of token ids
            order: Context length
            vocab_size: Vocabulary size
            smoothing: Additive count per cell, > 0

        Returns:
            ToyLM with smoothed conditionals
        """
        if smoothing <= 0:
            raise InvalidParameter("smoothing must be positive")
        counts = np.full((vocab_size ** order, vocab_size), smoothing)
        model = cls(order, vocab_size, np.full_like(counts, 1.0 / vocab_size))
        for i in range(order, len(tokens)):
            counts[model.context_index(tokens[i - order:i]), tokens[i]] += 1
        marginal = np.bincount(np.asarray(tokens, dtype=int), minlength=vocab_size) + smoothing
        return cls(order, vocab_size, counts / counts.sum(axis=1, keepdims=True),
                   marginal / marginal.sum())

    def to_dict(self) -> Dict:
        return {
            'order': self.order,
            'vocab_size': self.vocab_size,
            'seed': self.seed,
            'marginal': self._marginal.probs.tolist(),
            'tables': self.tables.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ToyLM':
        try:
            return cls(int(data['order']), int(data['vocab_size']),
                       np.asarray(data['tables'], dtype=float),
                       np.asarray(data['marginal'], dtype=float), data.get('seed'))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"Malformed model description: {exc}") from exc


@dataclass(frozen=True)
class ModelPairConfig:
    """
    Settings for a synthetic draft/target pair.

    Attributes:
        vocab_size: Vocabulary size V
        order: Markov order m
        divergence: Target mean TV distance between draft and target conditionals
        temperature: Sharpening exponent; smaller is peakier
        seed: Seed for every random table
        top_p: Nucleus threshold applied to target (and noise) rows, 1 disables
    """

    vocab_size: int = 8
    order: int = 1
    divergence: float = 0.3
    temperature: float = 1.0
    seed: int = 0
    top_p: float = 1.0

    def __post_init__(self):
        if self.vocab_size < 1:
            raise InvalidParameter("vocab_size must be >= 1")
        if self.order < 0:
            raise InvalidParameter("order must be >= 0")
        if not 0.0 <= self.divergence <= 1.0:
            raise UnreachableDivergence(f"Divergence {self.divergence} is outside [0, 1]")
        if self.temperature <= 0:
            raise InvalidParameter("temperature must be positive")
        if not 0.0 < self.top_p <= 1.0:
            raise InvalidParameter("top_p must lie in (0, 1]")


@dataclass(frozen=True)
class ModelPair:
    """A draft/target pair plus the configuration that produced it."""

    draft: ToyLM
    target: ToyLM
    config: Optional[ModelPairConfig] = None

    def mean_divergence(self) -> float:
        return ModelPairBuilder.mean_tv(self.draft, self.target)

    def to_dict(self) -> Dict:
        return {
            'format': BUNDLE_FORMAT,
            'config': asdict(self.config) if self.config else None,
            'draft': self.draft.to_dict(),
            'target': self.target.to_dict(),
        }

    def save(self, path: Union[str, Path]):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + '\n')

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelPair':
        if not isinstance(data, dict) or data.get('format') != BUNDLE_FORMAT:
            raise ParseError("Not a model-pair bundle")
        draft = ToyLM.from_dict(data['draft'])
        target = ToyLM.from_dict(data['target'])
        if (draft.vocab_size, draft.order) != (target.vocab_size, target.order):
            raise ParseError("Draft and target must share vocabulary size and order")
        config = ModelPairConfig(**data['config']) if data.get('config') else None
        return cls(draft, target, config)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'ModelPair':
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"Invalid model-pair JSON in {path}: {exc}") from exc
        return cls.from_dict(data)


class ModelPairBuilder:
    """
    Builds seeded draft/target pairs with a controlled divergence.
    """

    def __init__(self, config: ModelPairConfig):
        """
        Args:
            config: Pair settings
        """
        self.config = config
        self.target_tables = None
        self.draft_tables = None

    @staticmethod
    def sharpen(weights: np.ndarray, temperature: float) -> np.ndarray:
        """Raise rows to the power 1/temperature and renormalize."""
        powered = np.power(weights, 1.0 / temperature)
        return powered / powered.sum(axis=-1, keepdims=True)

    @staticmethod
    def nucleus(weights: np.ndarray, top_p: float) -> np.ndarray:
        """Apply CategoricalOps.top_p to every row."""
        if top_p >= 1.0:
            return weights
        return np.vstack([CategoricalOps.top_p(Categorical(row), top_p).probs for row in weights])

    @staticmethod
    def mean_tv(draft: ToyLM, target: ToyLM) -> float:
        return float(np.mean(0.5 * np.abs(draft.tables - target.tables).sum(axis=1)))

    def build_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Generate target and draft conditional tables.

        The target is a flat Dirichlet draw per context, sharpened by the
        temperature and optionally truncated to its top-p nucleus (the noise
        table likewise). The draft mixes the target with the noise,
        (1 - lam) * t + lam * n, with lam chosen so the per-context TV equals
        the requested divergence. When the noise row is too close to
        the target it is replaced by a point mass on the least likely token.

        Returns:
            Tuple of (target_tables, draft_tables)
        """
        cfg = self.config
        V = cfg.vocab_size
        n_ctx = V ** cfg.order
        rng = np.random.default_rng(cfg.seed)
        target = self.sharpen(rng.dirichlet(np.ones(V), size=n_ctx), cfg.temperature)
        noise = self.sharpen(rng.dirichlet(np.ones(V), size=n_ctx), cfg.temperature)
        target = self.nucleus(target, cfg.top_p)
        noise = self.nucleus(noise, cfg.top_p)

        if cfg.divergence == 0.0:
            draft = target.copy()
        elif cfg.divergence >= 1.0:
            if V < 2:
                raise UnreachableDivergence("Disjoint supports need at least two tokens")
            draft = np.zeros_like(target)
            for c in range(n_ctx):
                j = int(rng.integers(V))
                row = target[c].copy()
                row[j] = 0.0
                if row.sum() <= 1e-12:
                    row = np.ones(V)
                    row[j] = 0.0
                target[c] = row / row.sum()
                draft[c, j] = 1.0
        else:
            draft = np.empty_like(target)
            for c in range(n_ctx):
                t, nz = target[c], noise[c]
                tv = 0.5 * np.abs(t - nz).sum()
                if tv < cfg.divergence:
                    j = int(np.argmin(t))
                    nz = np.zeros(V)
                    nz[j] = 1.0
                    tv = 1.0 - t[j]
                lam = min(1.0, cfg.divergence / tv) if tv > 0 else 0.0
                draft[c] = (1.0 - lam) * t + lam * nz

        self.target_tables, self.draft_tables = target, draft
        return target, draft

    def build(self) -> ModelPair:
        """
        Build the pair and check the achieved divergence.

        Raises:
            UnreachableDivergence: if mean TV misses the request by more than 0.05
        """
        target_tables, draft_tables = self.build_tables()
        seed = self.config.seed
        target = ToyLM(self.config.order, self.config.vocab_size, target_tables, seed=seed)
        draft = ToyLM(self.config.order, self.config.vocab_size, draft_tables, seed=seed)
        measured = self.mean_tv(draft, target)
        if abs(measured - self.config.divergence) > DIVERGENCE_TOL:
            raise UnreachableDivergence(
                f"Requested divergence {self.config.divergence:.3f} but reached {measured:.3f}")
        logger.info("Built model pair V=%d order=%d divergence=%.3f (measured %.3f)",
                    self.config.vocab_size, self.config.order, self.config.divergence, measured)
        return ModelPair(draft, target, self.config)

    def context_statistics(self) -> pd.DataFrame:
        """
        Per-context summary of the generated tables.

        Returns:
            DataFrame with context index, TV distance and both entropies
        """
        if self.target_tables is None:
            self.build_tables()

        def entropy(rows: np.ndarray) -> np.ndarray:
            with np.errstate(divide='ignore', invalid='ignore'):
                logs = np.where(rows > 0, np.log(rows), 0.0)
            return -(rows * logs).sum(axis=1)

        return pd.DataFrame({
            'context': np.arange(self.target_tables.shape[0]),
            'tv_distance': 0.5 * np.abs(self.target_tables - self.draft_tables).sum(axis=1),
            'target_entropy': entropy(self.target_tables),
            'draft_entropy': entropy(self.draft_tables),
        })


def make_model_pair(config: ModelPairConfig) -> ModelPair:
    """Seeded draft/target pair for `config`."""
    return ModelPairBuilder(config).build()
