import argparse
import json
import os
import sys
import time
import typing

from dataclasses import asdict, replace
from pathlib import Path

import ezmsg.core as ez
import numpy as np

from .core import (
    ProblemInstance,
    InstanceError,
    EnumerationCapError,
    IterationBudgetError,
    PreconditionError,
    RejectionBudgetError,
    make_rng,
)
from .relaxation import solve_relaxation
from .solver import SolverConfig, solve_exact, solve_oracle, DEFAULT_ORACLE_CAP
from .experiments import (
    InteriorConfig,
    SamplingConfig,
    check_far_target_probability,
    check_interior_exactness,
    geometric_instance,
    lambda_from_multiplier,
    loglog_slope,
    planted_instance,
    random_matrix,
    scaling_sweep,
)
from .serialize import (
    RunArtifact,
    dumps_instance,
    experiment_summary,
    load_instance,
    relaxation_to_dict,
    report_to_dict,
    solution_to_dict,
    write_csv,
    write_summary,
)

EXIT_OK = 0
EXIT_FAILED = 1 # acceptance / tolerance failure, or an unflagged heuristic result
EXIT_INVALID = 2 # usage, validation, I/O
EXIT_CAP = 3 # enumeration or rejection cap refused the run

# Far-target frequency bound once lambda = 2 m^{3/2} sigma A_max
HALF = 0.5

SLOPE_LIMIT = 2.2


class Args:
    command: str
    kind: typing.Optional[str]
    path: typing.Optional[str]
    epsilon: typing.Optional[float]
    threads: typing.Optional[int]
    seed: int
    enum_cap: int
    support_cap: int
    exhaustive_F: bool
    radius_mode: str
    literal_box: bool
    check_oracle: bool
    oracle_cap: int
    allow_heuristic: bool
    u_mode: str
    upper: typing.Optional[int]
    sigma_override: typing.Optional[int]
    max_iters: int
    variant: str
    output: typing.Optional[str]
    m: int
    n: int
    sigma: int
    amax: int
    mode: str
    lam: typing.Optional[float]
    lambda_mult: float
    trials: int
    instance: typing.Optional[str]
    csv: typing.Optional[str]
    summary: typing.Optional[str]
    sizes: typing.List[int]


def _instance_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('instance')

    group.add_argument(
        'path',
        type = str,
        help = 'instance JSON file ({"A": [[...]], "b": [...], "sigma": k, "u": [...]})'
    )

    group.add_argument(
        '--u-mode',
        choices = ('file', 'unit'),
        default = 'file',
        help = "'file' keeps upper bounds from the instance, 'unit' solves over [0, 1]^n",
    )

    group.add_argument(
        '--upper',
        type = int,
        default = None,
        help = 'use the same upper bound u_i = UPPER on every coordinate',
    )

    group.add_argument(
        '--sigma-override',
        type = int,
        default = None,
        help = 'replace the sparsity budget from the file',
    )


def _solver_options(parser: argparse.ArgumentParser) -> None:
    defaults = SolverConfig()
    group = parser.add_argument_group('solver')

    group.add_argument(
        '--epsilon',
        type = float,
        default = defaults.epsilon,
        help = 'relaxation closeness (default sqrt(m) * A_max)',
    )

    group.add_argument(
        '--threads',
        type = int,
        default = None,
        help = 'worker processes (default: available cores); results do not depend on it',
    )

    group.add_argument(
        '--enum-cap',
        type = int,
        default = defaults.enum_cap,
        help = 'refuse proximity boxes with more integral points than this',
    )

    group.add_argument(
        '--support-cap',
        type = int,
        default = defaults.support_guess_cap,
        help = 'stop after this many support guesses (result flagged heuristic)',
    )

    F_mode = group.add_mutually_exclusive_group()
    F_mode.add_argument(
        '--exhaustive-F',
        dest = 'exhaustive_F',
        action = 'store_true',
        default = defaults.exhaustive_F,
        help = 'guess fractional supports of every size 0..min(m, sigma, n) (default)',
    )
    F_mode.add_argument(
        '--paper-F', '--fixed-F',
        dest = 'exhaustive_F',
        action = 'store_false',
        help = 'guess fractional supports of size min(m, sigma, n) only',
    )

    group.add_argument(
        '--radius-mode',
        choices = ('standard', 'column'),
        default = defaults.radius_mode,
        help = "'column' uses the column-norm proximity radius (flags the result heuristic)",
    )

    group.add_argument(
        '--literal-box',
        action = 'store_true',
        help = 'one feasibility query per box point instead of the fused search',
    )

    group.add_argument(
        '--allow-heuristic',
        action = 'store_true',
        help = 'exit 0 even when a cap truncated the search',
    )

    group.add_argument(
        '--seed',
        type = int,
        default = defaults.seed,
    )


def _output_option(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        '-o', '--output',
        type = str,
        default = None,
        help = 'also write the JSON result here',
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog = 'sparsecube',
        description = 'Exact sparse approximation over the unit cube'
    )
    commands = parser.add_subparsers(dest = 'command', required = True)

    solve = commands.add_parser('solve', help = 'exact solve of an instance file')
    _instance_options(solve)
    _solver_options(solve)
    oracle_group = solve.add_argument_group('oracle')
    oracle_group.add_argument(
        '--check-oracle',
        action = 'store_true',
        help = 'cross-check against brute force when it fits under --oracle-cap',
    )
    oracle_group.add_argument('--oracle-cap', type = int, default = DEFAULT_ORACLE_CAP)
    _output_option(solve)

    relax = commands.add_parser('relax', help = 'certified relaxation only')
    _instance_options(relax)
    relax_group = relax.add_argument_group('relaxation')
    relax_group.add_argument('--epsilon', type = float, default = None)
    relax_group.add_argument('--max-iters', type = int, default = SolverConfig().max_iters)
    relax_group.add_argument('--variant', choices = ('away', 'vanilla'), default = 'away')
    _output_option(relax)

    oracle = commands.add_parser('oracle', help = 'brute-force solve over all supports')
    _instance_options(oracle)
    oracle.add_argument('--oracle-cap', type = int, default = DEFAULT_ORACLE_CAP)
    _output_option(oracle)

    generate = commands.add_parser('generate', help = 'write a random instance')
    gen_group = generate.add_argument_group('generator')
    gen_group.add_argument('--m', type = int, default = 2)
    gen_group.add_argument('--n', type = int, default = 8)
    gen_group.add_argument('--sigma', type = int, default = 3)
    gen_group.add_argument('--amax', type = int, default = 2)
    gen_group.add_argument('--seed', type = int, default = 0)
    gen_group.add_argument(
        '--mode',
        choices = ('planted', 'geometric'),
        default = 'planted',
        help = "'planted': b = A x for a sparse x; 'geometric': b uniform on Q + lambda B",
    )
    gen_group.add_argument('--lambda', dest = 'lam', type = float, default = 1.0)
    gen_group.add_argument('--upper', type = int, default = None)
    _output_option(generate)

    experiment = commands.add_parser('experiment', help = 'Monte-Carlo checks of the target geometry')
    experiment.add_argument('kind', choices = ('interior', 'far'))
    exp_group = experiment.add_argument_group('experiment')
    exp_group.add_argument('--instance', type = str, default = None, help = 'instance file (b is ignored)')
    exp_group.add_argument('--m', type = int, default = 2)
    exp_group.add_argument('--n', type = int, default = 6)
    exp_group.add_argument('--sigma', type = int, default = 2)
    exp_group.add_argument('--amax', type = int, default = 2)
    exp_group.add_argument('--trials', type = int, default = None)
    exp_group.add_argument('--seed', type = int, default = 0)
    exp_group.add_argument('--threads', type = int, default = None)
    exp_group.add_argument('--lambda', dest = 'lam', type = float, default = None)
    exp_group.add_argument(
        '--lambda-mult',
        type = float,
        default = 2.0,
        help = 'lambda = MULT * m^{3/2} * sigma * A_max when --lambda is not given',
    )
    exp_group.add_argument('--csv', type = str, default = None, help = 'per-trial CSV')
    exp_group.add_argument('--summary', type = str, default = None, help = 'JSON summary')

    bench = commands.add_parser('bench', help = 'wall time and DP states against n for fixed m')
    bench_group = bench.add_argument_group('bench')
    bench_group.add_argument('--sizes', type = int, nargs = '+', default = [10, 20, 40, 80])
    bench_group.add_argument('--m', type = int, default = 2)
    bench_group.add_argument('--amax', type = int, default = 2)
    bench_group.add_argument('--sigma', type = int, default = 3)
    bench_group.add_argument('--seed', type = int, default = 0)
    bench_group.add_argument('--threads', type = int, default = 1)
    _output_option(bench)

    return parser


def _threads(args: Args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _load(args: Args) -> ProblemInstance:
    instance = load_instance(args.path)
    if args.u_mode == 'unit':
        instance = instance.without_bounds()
    if args.upper is not None:
        instance = ProblemInstance.create(instance.A, instance.b, instance.sigma, np.full(instance.n, args.upper))
    if args.sigma_override is not None:
        instance = ProblemInstance.create(instance.A, instance.b, args.sigma_override, instance.u)
    return instance


def _emit(artifact: RunArtifact, output: typing.Optional[str]) -> None:
    text = artifact.to_json()
    sys.stdout.write(text)
    if output:
        Path(output).write_text(text)


def cmd_solve(args: Args) -> int:
    instance = _load(args)
    config = SolverConfig(
        epsilon = args.epsilon,
        support_guess_cap = args.support_cap,
        enum_cap = args.enum_cap,
        exhaustive_F = args.exhaustive_F,
        threads = _threads(args),
        seed = args.seed,
        allow_heuristic = args.allow_heuristic,
        radius_mode = args.radius_mode,
        fused_box = not args.literal_box,
    )
    report = solve_exact(instance, config)
    results = report_to_dict(report, timings = False)
    status = EXIT_OK

    if args.check_oracle:
        try:
            oracle = solve_oracle(instance, args.oracle_cap)
        except EnumerationCapError as err:
            ez.logger.warning(f'oracle check skipped: {err}')
            results['oracle'] = None
        else:
            results['oracle'] = solution_to_dict(oracle)
            if abs(oracle.objective - report.best.objective) > 1e-6:
                ez.logger.error(
                    f'oracle mismatch: exact {report.best.objective:.12g} vs oracle {oracle.objective:.12g}'
                )
                status = EXIT_FAILED

    if report.heuristic and not config.allow_heuristic:
        ez.logger.error('search was truncated by a cap; rerun with --allow-heuristic to accept the result')
        status = EXIT_FAILED

    config_echo = asdict(config)
    config_echo.pop('threads')
    _emit(
        RunArtifact(args.path, 'solve', config_echo, results, {'wall_time': report.stats.wall_time}),
        args.output
    )
    return status


def cmd_relax(args: Args) -> int:
    instance = _load(args)
    started = time.perf_counter()
    try:
        relaxed = solve_relaxation(instance, args.epsilon, args.max_iters, args.variant)
        status = EXIT_OK
    except IterationBudgetError as err:
        ez.logger.error(str(err))
        relaxed = err.best
        status = EXIT_FAILED
    config = {'epsilon': args.epsilon, 'max_iters': args.max_iters, 'variant': args.variant}
    _emit(
        RunArtifact(args.path, 'relax', config, relaxation_to_dict(relaxed), {'wall_time': time.perf_counter() - started}),
        args.output
    )
    return status


def cmd_oracle(args: Args) -> int:
    instance = _load(args)
    started = time.perf_counter()
    best = solve_oracle(instance, args.oracle_cap)
    _emit(
        RunArtifact(args.path, 'oracle', {'oracle_cap': args.oracle_cap}, solution_to_dict(best), {'wall_time': time.perf_counter() - started}),
        args.output
    )
    return EXIT_OK


def cmd_generate(args: Args) -> int:
    for name in ('m', 'n', 'sigma'):
        if getattr(args, name) < 1:
            raise InstanceError([f'--{name} must be positive'])
    if args.amax < 0:
        raise InstanceError(['--amax must be nonnegative'])

    rng = make_rng(args.seed)
    u = None if args.upper is None else np.full(args.n, args.upper)
    if args.mode == 'planted':
        instance = planted_instance(args.m, args.n, args.sigma, args.amax, rng, u)
    else:
        instance = geometric_instance(args.m, args.n, args.sigma, args.amax, args.lam, rng)
        if u is not None:
            instance = ProblemInstance.create(instance.A, instance.b, instance.sigma, u)

    text = dumps_instance(instance)
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text)
    return EXIT_OK


def cmd_experiment(args: Args) -> int:
    if args.instance:
        instance = load_instance(args.instance)
    else:
        A = random_matrix(args.m, args.n, args.amax, make_rng(args.seed))
        instance = ProblemInstance.create(A, np.zeros(args.m), args.sigma)
    threads = _threads(args)

    if args.kind == 'interior':
        config = InteriorConfig(instance, seed = args.seed, threads = threads)
        if args.trials is not None:
            config = replace(config, trials = args.trials)
        report = check_interior_exactness(config)
        passed = report.frequency >= 1.0
    else:
        lam = args.lam if args.lam is not None else lambda_from_multiplier(instance, args.lambda_mult)
        config = SamplingConfig(instance, lam = lam, seed = args.seed, threads = threads)
        if args.trials is not None:
            config = replace(config, trials = args.trials)
        report = check_far_target_probability(config)
        passed = report.meets()
        if args.lam is None and args.lambda_mult >= 2.0:
            passed = passed and report.meets(HALF)

    if args.csv:
        write_csv(args.csv, report)
    if args.summary:
        write_summary(args.summary, report)
    sys.stdout.write(json.dumps(experiment_summary(report), indent = 2) + '\n')

    if not passed:
        ez.logger.error(f'{args.kind} experiment below its acceptance threshold')
        return EXIT_FAILED
    return EXIT_OK


def cmd_bench(args: Args) -> int:
    solver = SolverConfig(threads = max(1, args.threads))
    points = scaling_sweep(args.sizes, args.m, args.amax, args.sigma, args.seed, solver)
    ns = [p.n for p in points]
    time_slope = loglog_slope(ns, [p.wall_time for p in points])
    state_slope = loglog_slope(ns, [p.dp_states for p in points])
    results = {
        'points': [asdict(p) for p in points],
        'time_slope': time_slope,
        'state_slope': state_slope,
    }
    _emit(
        RunArtifact(None, 'bench', {'sizes': list(args.sizes), 'm': args.m, 'amax': args.amax, 'sigma': args.sigma, 'seed': args.seed}, results),
        args.output
    )
    if time_slope > SLOPE_LIMIT or state_slope > SLOPE_LIMIT:
        ez.logger.error(f'growth in n above slope {SLOPE_LIMIT}: time {time_slope:.2f}, states {state_slope:.2f}')
        return EXIT_FAILED
    return EXIT_OK


COMMANDS: typing.Dict[str, typing.Callable[[Args], int]] = {
    'solve': cmd_solve,
    'relax': cmd_relax,
    'oracle': cmd_oracle,
    'generate': cmd_generate,
    'experiment': cmd_experiment,
    'bench': cmd_bench,
}


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv, namespace = Args())
    except SystemExit as err:
        return EXIT_OK if not err.code else EXIT_INVALID

    try:
        return COMMANDS[args.command](args)
    except (InstanceError, PreconditionError, OSError) as err:
        ez.logger.error(f'{args.command}: {err}')
        return EXIT_INVALID
    except (EnumerationCapError, RejectionBudgetError) as err:
        ez.logger.error(f'{args.command}: {err}')
        return EXIT_CAP


if __name__ == '__main__':
    sys.exit(main())
