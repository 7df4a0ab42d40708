"""
Visualization Module
Creates charts for acceptance, scaling and speedup experiments.
"""

import numpy as np
import pandas as pd
import matplotlib.pyplot as plt
import seaborn as sns
from typing import Dict, Optional

from src.estimation import EstimationReport
from src.optimizer import CostModel


class ExperimentVisualizer:
    """
    Handles all visualization for tree planning experiments.
    """

    def __init__(self, style: str = 'seaborn-v0_8-darkgrid'):
        """
        Initialize the visualizer.

        Args:
            style: Matplotlib style to use
        """
        try:
            plt.style.use(style)
        except OSError:
            plt.style.use('default')

        sns.set_palette("husl")

    @staticmethod
    def plot_scaling_curves(table: pd.DataFrame, bounds: Optional[Dict[str, float]] = None):
        """
        Tokens per step against tree budget, one line per structure.

        Args:
            table: Experiment table (budget, structure, tokens_per_step, ci95)
            bounds: Optional horizontal reference lines keyed by label
        """
        fig, ax = plt.subplots(figsize=(12, 8))

        for label, group in table.groupby('structure', sort=False):
            ax.errorbar(group['budget'], group['tokens_per_step'], yerr=group['ci95'],
                        marker='o', linewidth=2, capsize=3, label=label)

        if bounds:
            for label, value in bounds.items():
                if np.isfinite(value):
                    ax.axhline(value, linestyle='--', linewidth=1, alpha=0.7, label=f'{label} bound')

        ax.set_xscale('log', base=2)
        ax.set_xlabel('Tree Size', fontsize=12)
        ax.set_ylabel('Generated Tokens per Step', fontsize=12)
        ax.set_title('Tokens per Step vs. Tree Size', fontsize=14, fontweight='bold')
        ax.legend(loc='best', fontsize=10)
        ax.grid(True, alpha=0.3)

        plt.tight_layout()

        return fig

    @staticmethod
    def plot_rejection_curves(reports: Dict[str, EstimationReport]):
        """
        Log-log rejection rate after k speculated children, one line per verifier.
        """
        fig, ax = plt.subplots(figsize=(10, 7))

        for label, report in reports.items():
            curve = report.rejection_curve()
            curve = curve[curve['r_k'] > 0]
            if curve.empty:
                continue
            ax.plot(curve['k'], curve['r_k'], marker='o', linewidth=2, label=label)

        ax.set_xscale('log')
        ax.set_yscale('log')
        ax.set_xlabel('Number of Speculated Children (k)', fontsize=12)
        ax.set_ylabel('Rejection Rate', fontsize=12)
        ax.set_title('Rejection Rate vs. Number Speculated', fontsize=14, fontweight='bold')
        ax.legend(loc='best', fontsize=10)
        ax.grid(True, alpha=0.3, which='both')

        plt.tight_layout()

        return fig

    @staticmethod
    def plot_speedup_grid(grid: pd.DataFrame):
        """
        Heatmap of modeled speedup over tree size and depth.

        Args:
            grid: Output of HardwareAwareOptimizer.speedup_grid
        """
        pivot = grid.pivot(index='d', columns='n', values='speedup')
        fig, ax = plt.subplots(figsize=(14, 6))

        sns.heatmap(pivot, cmap='viridis', ax=ax, cbar_kws={'label': 'Speedup'})

        best = grid.loc[grid['speedup'].idxmax()]
        ax.set_title(f"Modeled Speedup (best n={int(best['n'])}, d={int(best['d'])}: "
                     f"{best['speedup']:.2f}x)", fontsize=14, fontweight='bold')
        ax.set_xlabel('Tree Size (n)', fontsize=12)
        ax.set_ylabel('Depth (d)', fontsize=12)

        plt.tight_layout()

        return fig

    @staticmethod
    def plot_cost_model(model: CostModel, n_max: int = 512):
        """
        Verify-time ratio t(n) with the measured sample points.
        """
        fig, ax = plt.subplots(figsize=(10, 6))

        ns = np.arange(1, n_max + 1)
        ax.plot(ns, [model.t_of(n) for n in ns], linewidth=2, label='t(n)')
        inside = model.ns <= n_max
        ax.scatter(model.ns[inside], model.ts[inside], color='black', zorder=5, label='samples')

        ax.set_xlabel('Tokens Verified (n)', fontsize=12)
        ax.set_ylabel('Verify Time Ratio t(n)', fontsize=12)
        ax.set_title(f'Cost Model (c = {model.c:.3f}, b = {model.batch_size})',
                     fontsize=14, fontweight='bold')
        ax.legend(loc='best', fontsize=10)
        ax.grid(True, alpha=0.3)

        plt.tight_layout()

        return fig

    @staticmethod
    def save_figure(fig, filename: str, dpi: int = 150):
        """
        Save figure to file.

        Args:
            fig: Matplotlib figure
            filename: Output filename
            dpi: Resolution
        """
        fig.savefig(filename, dpi=dpi, bbox_inches='tight')
        plt.close(fig)
        print(f"Figure saved to {filename}")
