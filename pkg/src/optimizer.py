"""
Hardware-Aware Optimizer Module
Chooses tree size and depth maximizing speedup under a measured cost model.
"""

import logging
import numpy as np
import pandas as pd
from dataclasses import dataclass
from pathlib import Path
from scipy.optimize import isotonic_regression
from typing import Dict, List, Optional, Sequence, Union

from src.errors import InvalidParameter, MissingBaseline, ParseError
from src.planner import TIE_TOL, TreePlanner
from src.tree import AcceptanceVector, TreeTopology

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CostModel:
    """
    Verification cost ratios of the target model.

    Attributes:
        ns: Token counts of the samples, strictly increasing, starting at 1
        ts: t(n), verify time of n tokens over verify time of 1 token
        c: Draft-step time over single-token verify time, >= 0
        batch_size: Sequences verified together; t is evaluated at batch_size * n
    """

    ns: np.ndarray
    ts: np.ndarray
    c: float
    batch_size: int = 1

    def __post_init__(self):
        ns = np.asarray(self.ns, dtype=float)
        ts = np.asarray(self.ts, dtype=float)
        if ns.ndim != 1 or ns.shape != ts.shape or ns.size == 0:
            raise InvalidParameter("Cost samples need matching, nonempty n and t arrays")
        if np.any(np.diff(ns) <= 0):
            raise InvalidParameter("Cost sample sizes must be strictly increasing")
        if np.any(np.diff(ts) < 0):
            raise InvalidParameter("t(n) must be nondecreasing")
        if ns[0] != 1 or abs(ts[0] - 1.0) > 1e-6:
            raise MissingBaseline("Cost model must start at t(1) = 1")
        if self.c < 0:
            raise InvalidParameter("Draft cost ratio c must be >= 0")
        if self.batch_size < 1:
            raise InvalidParameter("Batch size must be >= 1")
        object.__setattr__(self, 'ns', ns)
        object.__setattr__(self, 'ts', ts)

    def t_of(self, n: float) -> float:
        """
        Piecewise-linear t(n).

        Constant below the first sample, linear with the final segment's
        slope above the last one.
        """
        if n <= self.ns[-1]:
            return float(np.interp(n, self.ns, self.ts))
        if self.ns.size == 1:
            return float(self.ts[-1])
        slope = (self.ts[-1] - self.ts[-2]) / (self.ns[-1] - self.ns[-2])
        return float(self.ts[-1] + slope * (n - self.ns[-1]))

    def verify_cost(self, n: int) -> float:
        return self.t_of(self.batch_size * n)

    def with_batch_size(self, batch_size: int) -> 'CostModel':
        return CostModel(self.ns, self.ts, self.c, batch_size)

    def to_dict(self) -> Dict:
        return {
            'n': [float(x) for x in self.ns],
            't': [float(x) for x in self.ts],
            'c': self.c,
            'batch_size': self.batch_size,
        }

    def to_measurements(self, verify_seconds: float = 0.02) -> pd.DataFrame:
        """Measurement table (n, seconds) that load_cost_model turns back into this model."""
        return pd.DataFrame({'n': self.ns.astype(int), 'seconds': self.ts * verify_seconds})

    @classmethod
    def flat(cls, c: float = 0.0, batch_size: int = 1) -> 'CostModel':
        """t(n) = 1 everywhere."""
        return cls(np.array([1.0, 2.0]), np.array([1.0, 1.0]), c, batch_size)

    @classmethod
    def synthetic(cls, kind: str = 'roofline', c: float = 0.02, knee: int = 64,
                  doubling: int = 32, n_max: int = 1024, batch_size: int = 1) -> 'CostModel':
        """
        Cost models for simulation.

        Args:
            kind: 'flat' (t = 1), 'roofline' (t = max(1, n / knee)) or
                'steep' (t doubles every `doubling` tokens)
            c: Draft/verify cost ratio
            knee: Memory-bound to compute-bound transition for 'roofline'
            doubling: Doubling period for 'steep'
            n_max: Largest sampled size for 'steep'
            batch_size: Batch size

        Returns:
            CostModel
        """
        kind = kind.lower()
        if kind == 'flat':
            return cls.flat(c, batch_size)
        elif kind == 'roofline':
            ns = np.array([1.0, float(knee), float(2 * knee)])
            ts = np.array([1.0, 1.0, 2.0])
        elif kind == 'steep':
            ns = np.arange(1, n_max + 1, doubling, dtype=float)
            ts = 2.0 ** ((ns - 1) / doubling)
        else:
            raise InvalidParameter(f"Unknown cost model kind: {kind}")
        return cls(ns, ts, c, batch_size)


def load_cost_model(source: Union[str, Path, pd.DataFrame], draft_seconds: float,
                    batch_size: int = 1) -> CostModel:
    """
    Build a CostModel from verify-time measurements.

    Args:
        source: CSV path or DataFrame with columns n, seconds
        draft_seconds: Time of one draft step
        batch_size: Batch size

    Returns:
        CostModel normalized by the n=1 time

    Raises:
        MissingBaseline: with fewer than two rows or no n=1 row
    """
    if isinstance(source, pd.DataFrame):
        frame = source.copy()
    else:
        try:
            frame = pd.read_csv(source)
        except pd.errors.ParserError as exc:
            raise ParseError(f"Cannot parse cost measurements {source}: {exc}") from exc
    if not {'n', 'seconds'} <= set(frame.columns):
        raise ParseError("Cost measurements need columns 'n' and 'seconds'")
    frame = frame[['n', 'seconds']].dropna()
    if len(frame) < 2:
        raise MissingBaseline("At least two cost measurements are required")
    frame = frame.astype({'n': int, 'seconds': float}).groupby('n', as_index=False).mean()
    frame = frame.sort_values('n').reset_index(drop=True)
    if frame['n'].iloc[0] != 1:
        raise MissingBaseline("Cost measurements lack the n=1 baseline row")
    if (frame['seconds'] <= 0).any():
        raise ParseError("Measured seconds must be positive")

    base = float(frame['seconds'].iloc[0])
    ts = np.maximum(frame['seconds'].to_numpy() / base, 1.0)
    if np.any(np.diff(ts) < 0):
        logger.warning("Verify times are not monotone in n; applying isotonic correction")
        ts = isotonic_regression(ts).x
    return CostModel(frame['n'].to_numpy(dtype=float), ts, draft_seconds / base, batch_size)


def speedup(G: float, n: int, d: int, model: CostModel) -> float:
    """G / (t(b * n) + d * c), with d the number of draft passes."""
    return G / (model.verify_cost(n) + d * model.c)


@dataclass(frozen=True)
class OptimizerResult:
    """
    Chosen configuration.

    Attributes:
        n: Tree size budget
        d: Tree depth in draft passes (the tree has d + 1 layers)
        topology: Best tree for (n, d)
        G: Expected generated tokens per step
        speedup: G / (t(b * n) + d * c)
    """

    n: int
    d: int
    topology: TreeTopology
    G: float
    speedup: float

    def to_dict(self) -> Dict:
        return {
            'n': self.n,
            'd': self.d,
            'G': self.G,
            'speedup': self.speedup,
            'topology': self.topology.to_dict(),
        }


class HardwareAwareOptimizer:
    """
    Grid search over tree size and depth for the best modeled speedup.
    """

    def __init__(self, p: AcceptanceVector, model: CostModel, kmax: Optional[int] = None):
        """
        Initialize the optimizer.

        Args:
            p: Acceptance vector
            model: Cost model
            kmax: Maximum children per node, defaults to len(p)
        """
        self.p = p
        self.model = model
        self.planner = TreePlanner(p, kmax)

    def speedup_grid(self, n_max: int, d_max: int) -> pd.DataFrame:
        """
        Every (n, d) grid point with its value and speedup.

        Args:
            n_max: Largest size budget
            d_max: Largest depth (draft passes)

        Returns:
            DataFrame with columns n, d, G, t, speedup
        """
        if n_max < 1 or d_max < 1:
            raise InvalidParameter("n_max and d_max must be >= 1")
        G, _ = self.planner.bounded_value_grid(n_max, d_max + 1)
        rows = []
        for n in range(1, n_max + 1):
            t = self.model.verify_cost(n)
            for d in range(1, d_max + 1):
                value = float(G[n, d + 1])
                rows.append({'n': n, 'd': d, 'G': value, 't': t,
                             'speedup': value / (t + d * self.model.c)})
        return pd.DataFrame(rows)

    def _argmax(self, grid: pd.DataFrame) -> pd.Series:
        # grid rows are ordered by n then d, so the first near-maximum wins ties
        values = grid['speedup'].to_numpy()
        idx = int(np.flatnonzero(values >= values.max() - TIE_TOL)[0])
        return grid.iloc[idx]

    def _result(self, row: pd.Series) -> OptimizerResult:
        n, d = int(row['n']), int(row['d'])
        plan = self.planner.best_tree_bounded(n, d + 1)
        return OptimizerResult(n, d, plan.topology, plan.value,
                               speedup(plan.value, n, d, self.model))

    def optimize(self, n_max: int, d_max: int) -> OptimizerResult:
        """
        Best (n, d) over n in [1, n_max], d in [1, d_max].

        Ties go to the smaller n, then the smaller d.

        Returns:
            OptimizerResult
        """
        grid = self.speedup_grid(n_max, d_max)
        result = self._result(self._argmax(grid))
        logger.info("Optimal configuration n=%d d=%d speedup=%.4f", result.n, result.d, result.speedup)
        return result

    def fixed_size_comparison(self, fixed_ns: Sequence[int], d_max: int,
                              n_max: Optional[int] = None) -> pd.DataFrame:
        """
        Hardware-aware choice next to the best depth for each fixed size.

        Args:
            fixed_ns: Fixed tree sizes to compare against
            d_max: Largest depth
            n_max: Grid size for the hardware-aware row, defaults to max(fixed_ns)

        Returns:
            DataFrame with columns config, n, d, G, speedup
        """
        n_max = n_max or max(fixed_ns)
        grid = self.speedup_grid(max(n_max, max(fixed_ns)), d_max)
        rows: List[Dict] = []
        best = self._argmax(grid[grid['n'] <= n_max])
        rows.append({'config': 'hardware-aware', 'n': int(best['n']), 'd': int(best['d']),
                     'G': float(best['G']), 'speedup': float(best['speedup'])})
        for n in fixed_ns:
            row = self._argmax(grid[grid['n'] == n].reset_index(drop=True))
            rows.append({'config': f'fixed n={n}', 'n': n, 'd': int(row['d']),
                         'G': float(row['G']), 'speedup': float(row['speedup'])})
        return pd.DataFrame(rows)


def print_optimizer_report(result: OptimizerResult, model: CostModel):
    """Print the chosen configuration."""
    print("\n" + "=" * 50)
    print("HARDWARE-AWARE TREE CONFIGURATION")
    print("=" * 50)
    print(f"Tree size (n):          {result.n}")
    print(f"Draft passes (d):       {result.d}")
    print(f"Expected tokens (G):    {result.G:.4f}")
    print(f"Verify cost t(b*n):     {model.verify_cost(result.n):.4f}")
    print(f"Draft cost ratio (c):   {model.c:.4f}")
    print(f"Batch size (b):         {model.batch_size}")
    print(f"Modeled speedup:        {result.speedup:.4f}x")
    print("=" * 50 + "\n")
