"""
Command-Line Interface
Planning, optimization, estimation and simulation commands with file-based
I/O and a reproducibility manifest next to every output.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src import __version__
from src.errors import InvariantViolation, ParseError, SequoiaLabError
from src.estimation import AcceptanceEstimator, EstimationReport
from src.optimizer import HardwareAwareOptimizer, load_cost_model, print_optimizer_report
from src.planner import TreePlanner, print_plan_report
from src.selfcheck import SelfCheck, print_selfcheck_report
from src.simulation import (
    ExperimentRunner,
    parse_budgets,
    parse_structures,
    print_experiment_report,
)
from src.toy_models import ModelPair, ModelPairConfig, make_model_pair
from src.tree import AcceptanceVector
from src.verifiers import ExactNodeOracle, VerifierKind

logger = logging.getLogger(__name__)

TOOL_NAME = 'sequoia-lab'
THREADS_ENV = 'SEQUOIA_LAB_THREADS'
CSV_FLOAT_FORMAT = '%.6f'
# Spawn key of the estimation stream, kept clear of per-cell indices
ESTIMATION_STREAM = 0x5EED0

# Options that must be supplied on the command line or through --config
REQUIRED = {
    'plan': ['acceptance', 'budget', 'out'],
    'optimize': ['acceptance', 'cost', 'draft_seconds', 'nmax', 'dmax', 'out'],
    'estimate': ['pair', 'verifier', 'kmax', 'seed', 'out'],
    'make-pair': ['seed', 'out'],
    'simulate': ['pair', 'verifier', 'budgets', 'seed', 'out'],
    'scaling': ['pair', 'verifier', 'budgets', 'seed', 'out'],
    'selfcheck': ['seed'],
    'replay': ['manifest'],
}
# Options naming files whose digests go into the manifest
INPUT_OPTIONS = ('acceptance', 'cost', 'pair', 'config')


@dataclass
class RunManifest:
    """
    Everything needed to reproduce a command's outputs.

    Attributes:
        command: Subcommand name
        argv: Arguments exactly as given (without the program name)
        parameters: Resolved option values
        seeds: Seeds used
        inputs: sha256 digest per input file
        version: Tool version
    """

    command: str
    argv: List[str]
    parameters: Dict[str, Any]
    seeds: Dict[str, int] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    version: str = __version__
    tool: str = TOOL_NAME

    def write(self, path: Path):
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + '\n')
        logger.info("Manifest written to %s", path)

    @classmethod
    def load(cls, path: Path) -> 'RunManifest':
        try:
            data = json.loads(Path(path).read_text())
            return cls(**data)
        except (json.JSONDecodeError, TypeError) as exc:
            raise ParseError(f"Invalid manifest {path}: {exc}") from exc


def file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_manifest(args: argparse.Namespace, argv: Sequence[str]) -> RunManifest:
    parameters = {k: v for k, v in sorted(vars(args).items()) if k not in ('func', 'threads')}
    seeds = {'seed': args.seed} if getattr(args, 'seed', None) is not None else {}
    inputs = {}
    for name in INPUT_OPTIONS:
        value = getattr(args, name, None)
        if value:
            inputs[str(value)] = file_digest(value)
    return RunManifest(args.command, list(argv), parameters, seeds, inputs)


def manifest_path(out: Path) -> Path:
    """manifest.json inside an output directory, <file>.manifest.json next to an output file."""
    if out.is_dir():
        return out / 'manifest.json'
    return out.with_name(out.name + '.manifest.json')


def write_json(path: Path, data: Dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n')


def write_csv(path: Path, table: pd.DataFrame):
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, na_rep='')


def read_acceptance(path: str) -> AcceptanceVector:
    return AcceptanceVector.from_json(Path(path).read_text())


def resolve_threads(value: Optional[int]) -> int:
    if value is not None:
        return value
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParseError(f"{THREADS_ENV} must be an integer, got '{env}'") from None
    return 1


def acceptance_for_pair(args: argparse.Namespace, pair: ModelPair,
                        kind: VerifierKind) -> AcceptanceVector:
    """
    Acceptance vector from --acceptance, or estimated on the pair.

    Small vocabularies are enumerated exactly, larger ones fall back to Monte
    Carlo. The method lands in args.estimation and from there in the manifest.
    """
    if getattr(args, 'acceptance', None):
        args.estimation = 'file'
        return read_acceptance(args.acceptance)
    kmax = min(pair.target.vocab_size, ExactNodeOracle.MAX_VOCAB)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, ESTIMATION_STREAM]))
    report = AcceptanceEstimator(pair.draft, pair.target).estimate(kind, kmax, rng=rng)
    args.estimation = report.method
    return report.p


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

def cmd_plan(args: argparse.Namespace) -> Path:
    p = read_acceptance(args.acceptance)
    planner = TreePlanner(p, args.kmax)
    result = planner.plan(args.budget, args.depth)
    result.check(p)
    out = Path(args.out)
    write_json(out, {**result.to_dict(), 'config': result.config})
    print_plan_report(result, p)
    return out


def cmd_optimize(args: argparse.Namespace) -> Path:
    p = read_acceptance(args.acceptance)
    model = load_cost_model(args.cost, args.draft_seconds, args.batch_size)
    optimizer = HardwareAwareOptimizer(p, model, args.kmax)
    result = optimizer.optimize(args.nmax, args.dmax)
    if abs(result.speedup - result.G / (model.verify_cost(result.n) + result.d * model.c)) > 1e-9:
        raise InvariantViolation("Reported speedup disagrees with the cost model")
    data = {**result.to_dict(), 'cost_model': model.to_dict()}

    print_optimizer_report(result, model)
    if args.compare_fixed:
        fixed = parse_budgets(args.compare_fixed)
        table = optimizer.fixed_size_comparison(fixed, args.dmax, args.nmax)
        data['fixed_comparison'] = table.to_dict(orient='records')
        print(table.to_string(index=False, float_format=lambda x: f"{x:.4f}"))

    out = Path(args.out)
    write_json(out, data)
    return out


def cmd_estimate(args: argparse.Namespace) -> Path:
    kind = VerifierKind.parse(args.verifier)
    pair = ModelPair.load(args.pair)
    rng = np.random.default_rng(args.seed)
    report: EstimationReport = AcceptanceEstimator(pair.draft, pair.target).estimate(
        kind, args.kmax, trials=args.trials, rng=rng)
    args.estimation = report.method
    out = Path(args.out)
    write_json(out, report.to_dict())
    write_csv(out.with_suffix('.rejection.csv'), report.rejection_curve())

    print("\n" + "=" * 50)
    print(f"ACCEPTANCE ESTIMATE ({kind.value})")
    print("=" * 50)
    if not report.exact:
        print(f"Monte Carlo, {report.trials} trials per context")
    for k, (p_k, r_k) in enumerate(zip(report.per_rank, report.r), start=1):
        print(f"  k={k:2d}  p_k={p_k:.6f}  r_k={r_k:.6f}")
    if report.b is not None:
        print(f"Power-law exponent b: {report.b:.4f}")
    if report.cover_rank is not None:
        print(f"Rejection reaches zero at k={report.cover_rank}")
    print("=" * 50 + "\n")
    return out


def cmd_make_pair(args: argparse.Namespace) -> Path:
    config = ModelPairConfig(args.vocab, args.order, args.divergence, args.temperature, args.seed,
                             args.top_p)
    pair = make_model_pair(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pair.save(out)
    print(f"Model pair written to {out} (mean TV {pair.mean_divergence():.4f})")
    return out


def _runner(args: argparse.Namespace, pair: ModelPair, kind: VerifierKind, mode: str,
            depth: Optional[int] = None) -> ExperimentRunner:
    p = acceptance_for_pair(args, pair, kind)
    cost_model = None
    if args.cost:
        cost_model = load_cost_model(args.cost, args.draft_seconds or 0.0, args.batch_size)
    prompt = tuple(int(t) for t in str(args.prompt).split(',') if t.strip())
    kmax = min(p.kmax, pair.target.vocab_size) if mode == 'decode' else None
    return ExperimentRunner(p, pair, kind, cost_model, mode=mode, trials=args.trials,
                            decode_length=args.length, prompt=prompt, seed=args.seed,
                            threads=resolve_threads(args.threads), kmax=kmax, depth_bound=depth)


def cmd_simulate(args: argparse.Namespace) -> Path:
    kind = VerifierKind.parse(args.verifier)
    pair = ModelPair.load(args.pair)
    budgets = parse_budgets(args.budgets)
    structures = parse_structures(args.structures)
    runner = _runner(args, pair, kind, 'decode', args.depth)
    table = runner.scaling_experiment(budgets, structures)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / 'decode.csv', table)
    write_json(out / 'acceptance.json', {'p': runner.p.to_list()})
    print_experiment_report(table, f"DECODE SIMULATION ({kind.value})")
    return out


def cmd_scaling(args: argparse.Namespace) -> Path:
    kind = VerifierKind.parse(args.verifier)
    pair = ModelPair.load(args.pair)
    budgets = parse_budgets(args.budgets)
    structures = parse_structures(args.structures)
    runner = _runner(args, pair, kind, args.mode)
    table = runner.scaling_experiment(budgets, structures)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / 'scaling.csv', table)
    write_json(out / 'acceptance.json', {'p': runner.p.to_list()})
    print_experiment_report(table, f"SCALING EXPERIMENT ({kind.value}, {args.mode})")
    return out


def cmd_selfcheck(args: argparse.Namespace) -> Optional[Path]:
    results = SelfCheck(args.seed, args.instances).run()
    passed = print_selfcheck_report(results)
    out = None
    if args.out:
        out = Path(args.out)
        write_json(out, {'passed': passed, 'checks': [asdict(r) for r in results]})
    if not passed:
        raise InvariantViolation("Self-check failed")
    return out


def cmd_replay(args: argparse.Namespace) -> None:
    manifest = RunManifest.load(Path(args.manifest))
    for path, digest in manifest.inputs.items():
        if not Path(path).exists() or file_digest(path) != digest:
            logger.warning("Input %s differs from the manifest; outputs may differ", path)
    code = main(manifest.argv)
    if code != 0:
        raise SequoiaLabError(f"Replayed command exited with code {code}")
    return None


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Optimal token trees, verification oracles and speculative decoding simulation")
    parser.add_argument('--config', help="JSON file whose keys mirror long option names")
    parser.add_argument('--threads', type=int, default=None,
                        help=f"Worker threads (default: ${THREADS_ENV} or 1)")
    parser.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--version', action='version', version=f"{TOOL_NAME} {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)

    plan = sub.add_parser('plan', help="Plan the optimal tree for a budget")
    plan.add_argument('--acceptance', help="Acceptance vector JSON")
    plan.add_argument('--budget', type=int)
    plan.add_argument('--depth', type=int, default=None, help="Layer bound (root-only tree = 1)")
    plan.add_argument('--kmax', type=int, default=None)
    plan.add_argument('--out')
    plan.set_defaults(func=cmd_plan)

    opt = sub.add_parser('optimize', help="Hardware-aware size/depth selection")
    opt.add_argument('--acceptance')
    opt.add_argument('--cost', help="CSV with columns n,seconds")
    opt.add_argument('--draft-seconds', type=float)
    opt.add_argument('--batch-size', type=int, default=1)
    opt.add_argument('--nmax', type=int)
    opt.add_argument('--dmax', type=int)
    opt.add_argument('--kmax', type=int, default=None)
    opt.add_argument('--compare-fixed', default=None, help="Fixed sizes, e.g. 64,128,256")
    opt.add_argument('--out')
    opt.set_defaults(func=cmd_optimize)

    est = sub.add_parser('estimate', help="Estimate the acceptance vector of a model pair")
    est.add_argument('--pair')
    est.add_argument('--verifier')
    est.add_argument('--kmax', type=int)
    est.add_argument('--trials', type=int, default=0, help="0 for exact enumeration")
    est.add_argument('--seed', type=int)
    est.add_argument('--out')
    est.set_defaults(func=cmd_estimate)

    mk = sub.add_parser('make-pair', help="Generate a seeded draft/target model pair")
    mk.add_argument('--vocab', type=int, default=8)
    mk.add_argument('--order', type=int, default=1)
    mk.add_argument('--divergence', type=float, default=0.3)
    mk.add_argument('--temperature', type=float, default=1.0)
    mk.add_argument('--top-p', type=float, default=1.0, help="Nucleus threshold, 1 disables")
    mk.add_argument('--seed', type=int)
    mk.add_argument('--out')
    mk.set_defaults(func=cmd_make_pair)

    for name, func, helptext in (('simulate', cmd_simulate, "End-to-end decode with planned trees"),
                                 ('scaling', cmd_scaling, "Tokens per step across structures")):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument('--pair')
        cmd.add_argument('--acceptance', default=None, help="Skip estimation and use this vector")
        cmd.add_argument('--verifier')
        cmd.add_argument('--budgets', help="e.g. 4,8,16 or 4,8,...,512")
        cmd.add_argument('--trials', type=int, default=10000)
        cmd.add_argument('--length', type=int, default=2000, help="Tokens per decode cell")
        cmd.add_argument('--prompt', default='0', help="Comma-separated prompt tokens")
        cmd.add_argument('--cost', default=None)
        cmd.add_argument('--draft-seconds', type=float, default=None)
        cmd.add_argument('--batch-size', type=int, default=1)
        cmd.add_argument('--seed', type=int)
        cmd.add_argument('--out')
        if name == 'simulate':
            cmd.add_argument('--depth', type=int, default=None)
            cmd.add_argument('--structures', default='sequoia')
        else:
            cmd.add_argument('--structures', default='sequoia,sequence,binary')
            cmd.add_argument('--mode', choices=['positional', 'decode'], default='positional')
        cmd.set_defaults(func=func)

    chk = sub.add_parser('selfcheck', help="Run the exhaustive verification oracles")
    chk.add_argument('--seed', type=int)
    chk.add_argument('--instances', type=int, default=200)
    chk.add_argument('--out', default=None)
    chk.set_defaults(func=cmd_selfcheck)

    rep = sub.add_parser('replay', help="Re-run the command recorded in a manifest")
    rep.add_argument('--manifest')
    rep.set_defaults(func=cmd_replay)

    parser.subcommands = sub.choices
    return parser


def apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]):
    """Use a --config JSON file as defaults for every option it names."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--config')
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        config = json.loads(Path(known.config).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"Invalid config file {known.config}: {exc}") from exc
    if not isinstance(config, dict):
        raise ParseError("Config file must hold a JSON object")
    config = {k.replace('-', '_'): v for k, v in config.items()}
    for key in ('threads', 'log_level'):
        if key in config:
            parser.set_defaults(**{key: config[key]})
    for subparser in parser.subcommands.values():
        dests = {action.dest for action in subparser._actions}
        subparser.set_defaults(**{k: v for k, v in config.items() if k in dests})


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the command line.

    Returns:
        Exit code: 0 success, 2 invalid input, 3 internal invariant violation
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        apply_config(parser, argv)
    except (SequoiaLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)

    missing = [name for name in REQUIRED[args.command] if getattr(args, name, None) is None]
    if missing:
        parser.error(f"{args.command}: missing required option(s): "
                     + ', '.join('--' + m.replace('_', '-') for m in missing))

    try:
        out = args.func(args)
        if out is not None:
            build_manifest(args, argv).write(manifest_path(out))
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except (SequoiaLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
