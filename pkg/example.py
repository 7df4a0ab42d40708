"""
Example Script - Sequoia Lab
Demonstrates planning, verification, estimation and hardware-aware tuning on
a small synthetic draft/target pair.
"""

import numpy as np
from dataclasses import replace
import pandas as pd
from src.toy_models import ModelPairBuilder, ModelPairConfig
from src.estimation import AcceptanceEstimator
from src.verifiers import ExactNodeOracle, VerifierKind, expected_tokens_sequence
from src.planner import TreePlanner
from src.optimizer import CostModel, HardwareAwareOptimizer, print_optimizer_report
from src.simulation import ExperimentRunner, print_experiment_report, summarize_experiment
from src.visualizer import ExperimentVisualizer


def main():
    """
    Main example demonstrating the full planning pipeline.
    """
    print("\n" + "="*80)
    print("SEQUOIA LAB - EXAMPLE RUN")
    print("="*80 + "\n")

    # 1. Define experiment parameters
    config = ModelPairConfig(vocab_size=8, order=1, divergence=0.3, temperature=0.7, seed=7)
    budgets = [4, 8, 16, 32, 64, 128]
    structures = ['sequoia', 'sequence', 'binary', 'k_independent:4']
    seed = 42

    print(f"Vocabulary: {config.vocab_size} tokens, order {config.order}")
    print(f"Requested divergence: {config.divergence}")
    print(f"Budgets: {budgets}\n")

    # 2. Build the model pair
    print("="*80)
    print("STEP 1: MODEL PAIR")
    print("="*80)

    builder = ModelPairBuilder(config)
    pair = builder.build()
    print(f"Measured mean TV distance: {pair.mean_divergence():.4f}")
    print("\nContext Statistics:")
    print("-"*80)
    stats = builder.context_statistics()
    print(stats.to_string(index=False, float_format=lambda x: f"{x:.4f}"))

    # 3. Exact node verification
    print("\n" + "="*80)
    print("STEP 2: EXACT NODE VERIFICATION")
    print("="*80 + "\n")

    oracle = ExactNodeOracle()
    P = pair.target.conditional([0])
    Q = pair.draft.conditional([0])
    for kind in VerifierKind:
        result = oracle.exact_node_distribution(P, Q, 4, kind)
        error = float(np.abs(result.output.probs - P.probs).max())
        print(f"{kind.value:10s} acceptance with 4 children: {result.acceptance:.4f} "
              f"(max output error {error:.1e})")

    # 4. Acceptance vectors
    print("\n" + "="*80)
    print("STEP 3: ACCEPTANCE ESTIMATION")
    print("="*80 + "\n")

    estimator = AcceptanceEstimator(pair.draft, pair.target, oracle)
    reports = {}
    for kind in (VerifierKind.SEQUOIA, VerifierKind.SPECINFER):
        report = estimator.estimate(kind, kmax=config.vocab_size)
        reports[kind.value] = report
        print(f"{kind.value}:")
        print(report.rejection_curve().to_string(index=False, float_format=lambda x: f"{x:.4f}"))
        if report.b is not None:
            print(f"  power-law exponent b = {report.b:.3f}")
        print()

    p = reports['sequoia'].p

    # 5. Robustness to sampling temperature
    print("="*80)
    print("STEP 4: TEMPERATURE AND TOP-P ROBUSTNESS")
    print("="*80 + "\n")

    ranks = [1, 2, 4, 8]
    for temperature in (0.2, 1.0):
        swept = ModelPairBuilder(replace(config, temperature=temperature)).build()
        swept_estimator = AcceptanceEstimator(swept.draft, swept.target, oracle)
        print(f"Temperature {temperature}: rejection rate after k children")
        for kind in VerifierKind:
            r = swept_estimator.estimate(kind, kmax=config.vocab_size).r
            cells = "  ".join(f"k={k}: {r[k - 1]:.4f}" for k in ranks)
            print(f"  {kind.value:10s} {cells}")
        print()

    nucleus = ModelPairBuilder(replace(config, top_p=0.8)).build()
    nucleus_estimator = AcceptanceEstimator(nucleus.draft, nucleus.target, oracle)
    print("Top-p 0.8: rejection rate after k children")
    for kind in VerifierKind:
        r = nucleus_estimator.estimate(kind, kmax=config.vocab_size).r
        cells = "  ".join(f"k={k}: {r[k - 1]:.4f}" for k in ranks)
        print(f"  {kind.value:10s} {cells}")
    print()

    # 6. Tree planning
    print("="*80)
    print("STEP 5: TREE PLANNING")
    print("="*80 + "\n")

    planner = TreePlanner(p)
    for n in budgets:
        plan = planner.best_tree_unbounded(n)
        print(f"n={n:4d}  expected tokens={plan.value:.4f}  depth={plan.depth}")
    alpha = p[1]
    print(f"\nSingle-chain reference at gamma=8: {expected_tokens_sequence(alpha, 8):.4f}")

    # 7. Scaling experiment
    print("\n" + "="*80)
    print("STEP 6: SCALING EXPERIMENT")
    print("="*80)

    runner = ExperimentRunner(p, pair, VerifierKind.SEQUOIA, mode='positional',
                              trials=5000, seed=seed)
    scaling = runner.scaling_experiment(budgets, structures)
    print_experiment_report(scaling)

    # 8. Hardware-aware optimization
    print("="*80)
    print("STEP 7: HARDWARE-AWARE OPTIMIZATION")
    print("="*80)

    model = CostModel.synthetic('roofline', c=0.05, knee=32)
    optimizer = HardwareAwareOptimizer(p, model)
    best = optimizer.optimize(n_max=128, d_max=12)
    print_optimizer_report(best, model)
    comparison = optimizer.fixed_size_comparison([16, 64, 128], d_max=12)
    print(comparison.to_string(index=False, float_format=lambda x: f"{x:.4f}"))

    # 9. Visualizations
    print("\n" + "="*80)
    print("STEP 8: VISUALIZATIONS")
    print("="*80 + "\n")

    visualizer = ExperimentVisualizer()
    bounds = {label: TreePlanner.structure_upper_bound(label, p)
              for label in ('sequence', 'binary')}
    visualizer.save_figure(visualizer.plot_scaling_curves(scaling, bounds), 'scaling_curves.png')
    visualizer.save_figure(visualizer.plot_rejection_curves(reports), 'rejection_curves.png')
    grid = optimizer.speedup_grid(64, 12)
    visualizer.save_figure(visualizer.plot_speedup_grid(grid), 'speedup_grid.png')
    visualizer.save_figure(visualizer.plot_cost_model(model, 128), 'cost_model.png')

    # 10. Save results to CSV
    print("\n" + "="*80)
    print("STEP 9: SAVING RESULTS")
    print("="*80 + "\n")

    scaling.to_csv('scaling.csv', index=False, float_format='%.6f', na_rep='')
    print("✓ Saved: scaling.csv")

    summary = pd.Series(summarize_experiment(scaling), name='best_tokens_per_step')
    summary.to_csv('structure_summary.csv')
    print("✓ Saved: structure_summary.csv")

    stats.to_csv('context_statistics.csv', index=False)
    print("✓ Saved: context_statistics.csv")

    print("\n" + "="*80)
    print("EXAMPLE RUN COMPLETED SUCCESSFULLY!")
    print("="*80)
    print("\nGenerated files:")
    print("  - scaling_curves.png")
    print("  - rejection_curves.png")
    print("  - speedup_grid.png")
    print("  - cost_model.png")
    print("  - scaling.csv")
    print("  - structure_summary.csv")
    print("  - context_statistics.csv")
    print("\n" + "="*80 + "\n")


if __name__ == "__main__":
    main()
