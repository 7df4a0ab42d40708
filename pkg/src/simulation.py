"""
Decoding Simulation Module
Grows speculated trees from a draft model, verifies them against a target
model, and runs the tokens-per-step and speedup experiments.
"""

import logging
import numpy as np
import pandas as pd
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from src.categorical import Categorical
from src.errors import InsufficientSupport, InvalidParameter, ParseError
from src.optimizer import CostModel, HardwareAwareOptimizer
from src.planner import TreePlanner
from src.toy_models import ModelPair, ToyLM
from src.tree import AcceptanceVector, TreeMetrics, TreeTopology
from src.verifiers import TreeVerifier, VerifierKind

logger = logging.getLogger(__name__)

ROOT_TOKEN = -1
EXPERIMENT_COLUMNS = ['budget', 'structure', 'tokens_per_step', 'ci95', 'simulated_speedup']


@dataclass(frozen=True)
class GrownTree:
    """
    Tokens and draft conditionals for every node of a speculated tree.

    Attributes:
        node_tokens: Token per node; the root holds the last prompt token
        draft_dists: Draft conditional at each internal node, None at leaves
        contexts: Full token context whose next-token law the node's children follow
        draft_passes: Draft forward passes spent, one per layer below the root
    """

    node_tokens: Tuple[int, ...]
    draft_dists: Tuple[Optional[Categorical], ...]
    contexts: Tuple[Tuple[int, ...], ...]
    draft_passes: int


def grow_tree(draft: ToyLM, prefix: Sequence[int], topology: TreeTopology,
              kind: VerifierKind, rng: np.random.Generator) -> GrownTree:
    """
    Fill a topology with draft tokens, layer by layer.

    Sequoia draws each node's children without replacement, SpecInfer i.i.d.,
    top-k takes the most likely draft tokens.

    Args:
        draft: Draft model
        prefix: Context before the tree
        topology: Tree shape
        kind: Verifier the tree is grown for
        rng: Seeded generator

    Returns:
        GrownTree
    """
    widest = topology.max_children()
    if widest > draft.vocab_size:
        raise InsufficientSupport(
            f"A node has {widest} children but the vocabulary has {draft.vocab_size} tokens")
    n = topology.size
    tokens: List[int] = [int(prefix[-1]) if len(prefix) else ROOT_TOKEN] + [0] * (n - 1)
    contexts: List[Tuple[int, ...]] = [tuple(prefix)] + [()] * (n - 1)
    dists: List[Optional[Categorical]] = [None] * n

    for v in range(n):
        kids = topology.children(v)
        if not kids:
            continue
        Q = draft.conditional(contexts[v])
        dists[v] = Q
        for child, token in zip(kids, kind.draw_children(Q, len(kids), rng)):
            tokens[child] = int(token)
            contexts[child] = contexts[v] + (int(token),)

    return GrownTree(tuple(tokens), tuple(dists), tuple(contexts), topology.depth)


@dataclass
class DecodeResult:
    """
    Output of a speculative decoding run.

    Attributes:
        tokens: Generated tokens (prompt excluded), exactly the requested length
        steps: Verification steps taken
        accepted_counts: Tokens generated at each step
        draft_passes: Total draft forward passes
    """

    tokens: List[int]
    steps: int
    accepted_counts: np.ndarray
    draft_passes: int = 0

    @property
    def tokens_per_step(self) -> float:
        return float(self.accepted_counts.mean()) if self.steps else 0.0


def run_decode(draft: ToyLM, target: ToyLM, topology: TreeTopology, kind: VerifierKind,
               prompt: Sequence[int], length: int, rng: np.random.Generator) -> DecodeResult:
    """
    Speculative decoding with a fixed tree shape until `length` tokens exist.

    Args:
        draft: Draft model
        target: Target model
        topology: Tree grown at every step
        kind: Verification algorithm
        prompt: Initial context
        length: Tokens to generate, >= 1
        rng: Seeded generator

    Returns:
        DecodeResult
    """
    if length < 1:
        raise InvalidParameter("length must be >= 1")
    context = list(prompt)
    generated: List[int] = []
    counts: List[int] = []
    passes = 0
    while len(generated) < length:
        grown = grow_tree(draft, context, topology, kind, rng)
        targets = [target.conditional(ctx) for ctx in grown.contexts]
        result = TreeVerifier.verify_tree(topology, grown.node_tokens, grown.draft_dists,
                                          targets, kind, rng)
        step_tokens = result.tokens
        generated.extend(step_tokens)
        context.extend(step_tokens)
        counts.append(result.tokens_generated)
        passes += grown.draft_passes
    return DecodeResult(generated[:length], len(counts), np.asarray(counts, dtype=np.int64), passes)


def run_sequence_decode(draft: ToyLM, target: ToyLM, gamma: int, prompt: Sequence[int],
                        steps: int, rng: np.random.Generator) -> np.ndarray:
    """Tokens generated by each of `steps` sequence-decoding steps."""
    context = list(prompt)
    counts = np.zeros(steps, dtype=np.int64)
    for i in range(steps):
        out = TreeVerifier.sequence_spec_decode(draft, target, context, gamma, rng)
        context.extend(out)
        counts[i] = len(out)
    return counts


def parse_structure(text: str) -> Tuple[str, int]:
    """
    Parse a structure name such as 'sequoia', 'sequence', 'binary',
    'k_independent:16' or 'k_ary:4'.

    Returns:
        Tuple of (name, k)
    """
    name, _, arg = text.strip().partition(':')
    name = name.lower()
    if name in ('sequoia', 'sequence', 'binary'):
        if arg:
            raise ParseError(f"Structure '{name}' takes no parameter")
        return name, 2 if name == 'binary' else 1
    if name in ('k_independent', 'k_ary'):
        try:
            k = int(arg)
        except ValueError:
            raise ParseError(f"Structure '{text}' needs an integer, e.g. {name}:4") from None
        if k < 1:
            raise ParseError(f"Structure '{text}' needs k >= 1")
        return name, k
    raise ParseError(f"Unknown structure '{text}'")


def parse_structures(text: str) -> List[str]:
    labels = [s.strip() for s in text.split(',') if s.strip()]
    if not labels:
        raise ParseError("No structures given")
    for label in labels:
        parse_structure(label)
    return labels


def parse_budgets(text: str) -> List[int]:
    """
    Parse a budget list such as '4,8,16' or the shorthand '4,8,...,512'.

    The shorthand continues the progression set by the first two entries:
    geometric when it lands exactly on the last entry, otherwise arithmetic.
    """
    parts = [s.strip() for s in text.replace('…', '...').split(',') if s.strip()]
    try:
        if '...' in parts:
            if len(parts) != 4 or parts[2] != '...':
                raise ParseError(f"Malformed budget list '{text}'")
            first, second, last = int(parts[0]), int(parts[1]), int(parts[3])
            budgets = _expand_progression(first, second, last)
        else:
            budgets = [int(s) for s in parts]
    except ValueError:
        raise ParseError(f"Malformed budget list '{text}'") from None
    if not budgets or any(b < 1 for b in budgets):
        raise ParseError(f"Budgets must be positive integers: '{text}'")
    if any(b >= a for a, b in zip(budgets[1:], budgets)):
        raise ParseError(f"Budgets must be strictly increasing: '{text}'")
    return budgets


def _expand_progression(first: int, second: int, last: int) -> List[int]:
    if second <= first or last < second:
        raise ParseError("Budget progression must increase")
    if second % first == 0:
        ratio = second // first
        values = [first]
        while values[-1] < last:
            values.append(values[-1] * ratio)
        if values[-1] == last:
            return values
    step = second - first
    if (last - first) % step == 0:
        return list(range(first, last + 1, step))
    raise ParseError(f"Cannot reach {last} from {first},{second}")


@dataclass
class ExperimentRunner:
    """
    Tokens-per-step and speedup experiments over budgets and tree shapes.

    Attributes:
        p: Acceptance vector for planning (and positional simulation)
        pair: Model pair for decode-mode measurement
        kind: Verifier used when decoding
        cost_model: Converts tokens/step into simulated speedup
        mode: 'positional' (simulate positional acceptance) or 'decode'
        trials: Positional trials per cell; 0 gives the exact expectation
        decode_length: Tokens generated per decode-mode cell
        prompt: Decode prompt
        seed: Master seed; cell i uses SeedSequence([seed, i])
        threads: Worker threads for cells
        kmax: Children per node for planned trees, defaults to len(p)
        depth_bound: Layer bound for planned trees, None for unbounded
    """

    p: AcceptanceVector
    pair: Optional[ModelPair] = None
    kind: VerifierKind = VerifierKind.SEQUOIA
    cost_model: Optional[CostModel] = None
    mode: str = 'positional'
    trials: int = 10000
    decode_length: int = 2000
    prompt: Tuple[int, ...] = (0,)
    seed: int = 0
    threads: int = 1
    kmax: Optional[int] = None
    depth_bound: Optional[int] = None
    planner: TreePlanner = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in ('positional', 'decode'):
            raise InvalidParameter(f"Unknown mode '{self.mode}'")
        if self.mode == 'decode' and self.pair is None:
            raise InvalidParameter("Decode mode needs a model pair")
        if self.trials < 0 or self.threads < 1:
            raise InvalidParameter("trials must be >= 0 and threads >= 1")
        if self.mode == 'decode' and self.decode_length < 1:
            raise InvalidParameter("decode_length must be >= 1")
        self.planner = TreePlanner(self.p, self.kmax)

    def structure_topology(self, label: str, budget: int) -> TreeTopology:
        name, k = parse_structure(label)
        if name == 'sequoia':
            return self.planner.plan(budget, self.depth_bound).topology
        return TreePlanner.fixed_structure_topology(name, budget, k)

    def _cell_rng(self, index: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, index]))

    def measure(self, topology: TreeTopology, index: int) -> Tuple[float, float]:
        """
        Mean tokens per step and its 95% half-width for one cell.
        """
        if self.mode == 'decode':
            result = run_decode(self.pair.draft, self.pair.target, topology, self.kind,
                                self.prompt, self.decode_length, self._cell_rng(index))
            counts = result.accepted_counts
        elif self.trials == 0:
            return TreeMetrics.expected_tokens(topology, self.p), 0.0
        else:
            counts = TreeMetrics.simulate_trials(topology, self.p, self.trials,
                                                 self._cell_rng(index))
        if counts.size < 2:
            return float(counts.mean()), 0.0
        return float(counts.mean()), float(1.96 * counts.std(ddof=1) / np.sqrt(counts.size))

    def _speedup(self, tokens: float, budget: int, depth: int) -> float:
        if self.cost_model is None:
            return float('nan')
        return tokens / (self.cost_model.verify_cost(budget) + depth * self.cost_model.c)

    def _run_cells(self, cells: List[Tuple[str, int, TreeTopology, int]]) -> pd.DataFrame:
        def work(item):
            index, (label, budget, topology, depth) = item
            tokens, ci = self.measure(topology, index)
            return {'budget': budget, 'structure': label, 'tokens_per_step': tokens,
                    'ci95': ci, 'simulated_speedup': self._speedup(tokens, budget, depth)}

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            rows = list(pool.map(work, enumerate(cells)))
        return pd.DataFrame(rows, columns=EXPERIMENT_COLUMNS)

    @staticmethod
    def _check_budgets(budgets: Sequence[int]):
        if not budgets or any(b < 1 for b in budgets):
            raise InvalidParameter("Budgets must be positive")
        if any(b >= a for a, b in zip(budgets[1:], budgets)):
            raise InvalidParameter("Budgets must be sorted and distinct")

    def scaling_experiment(self, budgets: Sequence[int], structures: Sequence[str]) -> pd.DataFrame:
        """
        Tokens per step for every (structure, budget) cell.

        Args:
            budgets: Sorted size budgets
            structures: Structure labels, see parse_structure

        Returns:
            DataFrame with columns budget, structure, tokens_per_step, ci95, simulated_speedup
        """
        self._check_budgets(budgets)
        cells = []
        for label in structures:
            for budget in budgets:
                topology = self.structure_topology(label, budget)
                cells.append((label, budget, topology, topology.depth))
        logger.info("Running %d scaling cells on %d thread(s)", len(cells), self.threads)
        return self._run_cells(cells)

    def speedup_experiment(self, budgets: Sequence[int], d_max: int) -> pd.DataFrame:
        """
        Simulated speedup of the best tree at each fixed budget and of the
        hardware-aware choice over the whole grid.

        Fixed rows use the depth that maximizes modeled speedup for that
        budget; the last row is the optimizer's (n, d).

        Args:
            budgets: Sorted size budgets
            d_max: Largest depth in draft passes

        Returns:
            DataFrame in the experiment CSV layout
        """
        if self.cost_model is None:
            raise InvalidParameter("Speedup experiments need a cost model")
        self._check_budgets(budgets)
        optimizer = HardwareAwareOptimizer(self.p, self.cost_model, self.kmax)
        optimizer.planner = self.planner
        grid = optimizer.speedup_grid(max(budgets), d_max)
        cells = []
        for budget in budgets:
            rows = grid[grid['n'] == budget]
            values = rows['speedup'].to_numpy()
            d = int(rows['d'].to_numpy()[np.flatnonzero(values >= values.max() - 1e-12)[0]])
            topology = self.planner.best_tree_bounded(budget, d + 1).topology
            cells.append((f'sequoia:d={d}', budget, topology, d))
        best = optimizer.optimize(max(budgets), d_max)
        cells.append((f'hardware_aware:d={best.d}', best.n, best.topology, best.d))
        return self._run_cells(cells)


def summarize_experiment(table: pd.DataFrame) -> Dict[str, float]:
    """Best tokens per step for each structure."""
    return {label: float(group['tokens_per_step'].max())
            for label, group in table.groupby('structure', sort=False)}


def print_experiment_report(table: pd.DataFrame, title: str = "SCALING EXPERIMENT"):
    """Print an experiment table grouped by structure."""
    print("\n" + "=" * 50)
    print(title)
    print("=" * 50)
    for label, group in table.groupby('structure', sort=False):
        print(f"\n{label}:")
        for _, row in group.iterrows():
            line = f"  n={int(row['budget']):5d}  tokens/step={row['tokens_per_step']:.4f} +/- {row['ci95']:.4f}"
            if not np.isnan(row['simulated_speedup']):
                line += f"  speedup={row['simulated_speedup']:.4f}x"
            print(line)
    print("=" * 50 + "\n")
