import concurrent.futures
import functools
import itertools
import math
import time
import typing

from dataclasses import dataclass, field, fields

import ezmsg.core as ez
import numpy as np
import numpy.typing as npt
import scipy.linalg

from scipy.optimize import lsq_linear

from .core import (
    ProblemInstance,
    SparseSolution,
    EnumerationCapError,
    IterationBudgetError,
    PreconditionError,
    TIE_RTOL,
    ZERO_TOL,
    best_of,
    is_better,
)
from .relaxation import (
    DEFAULT_MAX_ITERS,
    RelaxedSolution,
    default_epsilon,
    solve_relaxation,
    reduce_to_few_fractionals,
)
from .proximity import (
    DEFAULT_ENUM_CAP,
    ProximityBound,
    box_bounds,
    box_size,
    compute_bounds,
    enumerate_box,
    reachable_box,
    round_fractional_part,
)
from .feasibility import (
    FeasibilityQuery,
    SuffixTable,
    SupportWalk,
    solve_feasibility,
)
from .extension import (
    BoxLeastSquares,
    box_least_squares,
    extend,
)

DEFAULT_ORACLE_CAP = 2_000_000

# Candidates whose lower bound exceeds the incumbent by more than this are skipped
LB_RTOL = 1e-9


class SolverConfig(ez.Settings):
    epsilon: typing.Optional[float] = None # None: sqrt(m) * A_max
    max_iters: int = DEFAULT_MAX_ITERS
    support_guess_cap: int = 1_000_000
    enum_cap: int = DEFAULT_ENUM_CAP
    exhaustive_F: bool = True # False: only |F| = min(m, sigma, n)
    threads: int = 1
    seed: int = 0
    allow_heuristic: bool = False
    radius_mode: str = 'standard' # 'standard' | 'column'
    fused_box: bool = True
    chunk_size: int = 32 # top-level support indices per work item
    variant: str = 'away' # Frank-Wolfe variant for the relaxation
    round_order: str = 'index'

    def check(self) -> None:
        if self.support_guess_cap < 1 or self.enum_cap < 1:
            raise PreconditionError('caps must be positive')
        if self.chunk_size < 1 or self.threads < 1:
            raise PreconditionError('chunk_size and threads must be positive')
        if self.epsilon is not None and not self.epsilon > 0:
            raise PreconditionError(f'epsilon must be positive, got {self.epsilon}')
        if self.radius_mode not in ('standard', 'column'):
            raise PreconditionError(f'unknown radius mode: {self.radius_mode}')


@dataclass
class SolveStats:
    support_guesses: int = 0
    b_star_enumerated: int = 0
    feasibility_calls: int = 0
    feasible_z: int = 0
    extensions: int = 0
    pruned: int = 0
    dp_states: int = 0
    wall_time: float = 0.0

    def merge(self, other: 'SolveStats') -> 'SolveStats':
        return SolveStats(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})


@dataclass(frozen = True)
class SolveReport:
    best: SparseSolution
    relaxation: RelaxedSolution
    bounds: ProximityBound
    stats: SolveStats
    epsilon: float
    heuristic: bool = False # some cap truncated the search
    notes: typing.Tuple[str, ...] = ()


@dataclass(frozen = True)
class _Chunk:
    start: int
    stop: int
    limit: typing.Optional[int] = None
    guesses: typing.Tuple[typing.Tuple[int, ...], ...] = field(default_factory = tuple)


def _bound(incumbent: SparseSolution) -> float:
    return incumbent.objective + LB_RTOL * max(1.0, incumbent.objective)


def guess_sizes(instance: ProblemInstance, config: SolverConfig) -> typing.List[int]:
    k_max = min(instance.m, instance.sigma_eff, instance.n)
    return list(range(k_max + 1)) if config.exhaustive_F else [k_max]


class _GuessContext:
    """ Everything that only depends on the fractional support F """

    def __init__(self, instance: ProblemInstance, F: typing.Sequence[int]) -> None:
        self.F = list(F)
        members = set(self.F)
        self.rest = [i for i in range(instance.n) if i not in members]
        self.budget = instance.sigma_eff - len(self.F)
        self.A_rest = instance.A[:, self.rest]
        self.upper_rest = None if instance.u is None else tuple(int(instance.u[i]) for i in self.rest)

        A_F = instance.A[:, self.F].astype(float)
        if self.F:
            self.plan = BoxLeastSquares(A_F, instance.upper[self.F])
            # residual left after the best unconstrained use of the columns in F
            self.perp = np.eye(instance.m) - A_F @ scipy.linalg.pinv(A_F, check_finite = False)
        else:
            self.plan = None
            self.perp = np.eye(instance.m)

    def lower_bounds(self, rhs: npt.NDArray) -> npt.NDArray:
        return np.linalg.norm(np.atleast_2d(rhs) @ self.perp.T, axis = 1)

    def witness(self, target: typing.Sequence[int]) -> npt.NDArray:
        table = SuffixTable(self.A_rest, self.budget, target, target, self.upper_rest)
        y = table.witness(target)
        assert y is not None, 'target reported feasible has no witness'
        return y


def _scan_targets(
    instance: ProblemInstance,
    ctx: _GuessContext,
    targets: npt.NDArray,
    counts: npt.NDArray,
    incumbent: SparseSolution,
    stats: SolveStats
) -> SparseSolution:
    """ Extend every feasible target of one support guess, best lower bound first """
    N = targets.shape[0]
    stats.feasible_z += N
    if N == 0:
        return incumbent

    rhs = instance.b[None, :] - targets
    lb = ctx.lower_bounds(rhs)
    keep = np.flatnonzero(lb <= _bound(incumbent))
    stats.pruned += N - keep.size
    if keep.size == 0:
        return incumbent

    if ctx.plan is not None:
        G, obj = ctx.plan.solve_many(rhs[keep])
    else:
        G, obj = np.zeros((keep.size, 0)), lb[keep]
    stats.extensions += keep.size

    for pos in np.argsort(obj, kind = 'stable'):
        if obj[pos] > _bound(incumbent):
            break
        i = keep[pos]
        scale = max(1.0, incumbent.objective)
        tied = obj[pos] >= incumbent.objective - 0.5 * TIE_RTOL * scale
        if tied and counts[i] + np.count_nonzero(G[pos] > ZERO_TOL) > len(incumbent.support):
            continue
        x = np.zeros(instance.n)
        x[ctx.rest] = ctx.witness(targets[i])
        x[ctx.F] = G[pos]
        candidate = SparseSolution.from_vector(instance, x)
        if is_better(candidate, incumbent):
            incumbent = candidate
    return incumbent


def _search_fused(
    instance: ProblemInstance,
    config: SolverConfig,
    center: npt.NDArray,
    radius: float,
    limits: typing.Tuple[npt.NDArray, npt.NDArray],
    incumbent: SparseSolution,
    chunk: _Chunk
) -> typing.Tuple[SparseSolution, SolveStats]:
    stats = SolveStats()
    lo, hi = box_bounds(center, radius, limits)
    n_box = math.prod(max(int(h) - int(l) + 1, 0) for l, h in zip(lo, hi))
    upper = None if instance.u is None else instance.upper_int

    walk = SupportWalk(instance.A, instance.sigma_eff, lo, hi, upper)
    for guess in walk.guesses(chunk.start, chunk.stop, guess_sizes(instance, config), chunk.limit):
        stats.support_guesses += 1
        stats.feasibility_calls += 1
        stats.b_star_enumerated += n_box
        ctx = _GuessContext(instance, guess.F)
        incumbent = _scan_targets(instance, ctx, guess.targets, guess.counts, incumbent, stats)
    stats.dp_states += walk.n_states
    return incumbent, stats


def _search_literal(
    instance: ProblemInstance,
    config: SolverConfig,
    center: npt.NDArray,
    radius: float,
    limits: typing.Tuple[npt.NDArray, npt.NDArray],
    incumbent: SparseSolution,
    chunk: _Chunk
) -> typing.Tuple[SparseSolution, SolveStats]:
    """ One feasibility query per (F, b*), exactly as the enumeration reads """
    stats = SolveStats()
    for F in chunk.guesses:
        stats.support_guesses += 1
        ctx = _GuessContext(instance, F)

        found = []
        for b_star in enumerate_box(center, radius, config.enum_cap, limits = limits):
            stats.b_star_enumerated += 1
            stats.feasibility_calls += 1
            y = solve_feasibility(FeasibilityQuery(ctx.A_rest, b_star, ctx.budget, ctx.upper_rest))
            if y is None:
                continue
            stats.feasible_z += 1
            z = np.zeros(instance.n)
            z[ctx.rest] = y
            found.append((float(ctx.lower_bounds(instance.b - np.asarray(b_star, dtype = float))[0]), z))

        found.sort(key = lambda item: item[0])
        for i, (lb, z) in enumerate(found):
            if lb > _bound(incumbent):
                stats.pruned += len(found) - i
                break
            candidate = extend(instance, z, ctx.F, ctx.plan)
            stats.extensions += 1
            if is_better(candidate, incumbent):
                incumbent = candidate
    return incumbent, stats


def _run_chunk(
    instance: ProblemInstance,
    config: SolverConfig,
    center: npt.NDArray,
    radius: float,
    limits: typing.Tuple[npt.NDArray, npt.NDArray],
    incumbent: SparseSolution,
    chunk: _Chunk
) -> typing.Tuple[SparseSolution, SolveStats]:
    search = _search_fused if config.fused_box else _search_literal
    return search(instance, config, center, radius, limits, incumbent, chunk)


def _fused_chunks(instance: ProblemInstance, config: SolverConfig, sizes: typing.List[int]) -> typing.List[_Chunk]:
    n = instance.n
    cap = config.support_guess_cap

    def subtree(f: int) -> int:
        return sum(math.comb(n - f - 1, k - 1) for k in sizes if k >= 1)

    chunks = []
    offset = 1 if 0 in sizes else 0
    for start in range(0, n, config.chunk_size):
        stop = min(start + config.chunk_size, n)
        limit = cap - (0 if start == 0 else offset)
        if limit <= 0:
            break
        chunks.append(_Chunk(start, stop, limit))
        offset += sum(subtree(f) for f in range(start, stop))
    return chunks


def _literal_chunks(instance: ProblemInstance, config: SolverConfig, sizes: typing.List[int]) -> typing.List[_Chunk]:
    all_guesses = itertools.chain.from_iterable(itertools.combinations(range(instance.n), k) for k in sizes)
    guesses = list(itertools.islice(all_guesses, config.support_guess_cap))
    return [
        _Chunk(start, start + len(part), guesses = tuple(part))
        for start, part in (
            (s, guesses[s:s + config.chunk_size]) for s in range(0, len(guesses), config.chunk_size)
        )
    ]


def solve_exact(instance: ProblemInstance, config: typing.Optional[SolverConfig] = None) -> SolveReport:
    """ Optimal x for min ||Ax - b|| s.t. 0 <= x <= u, ||x||_0 <= sigma.

    Relaxation, proximity box around A x_bar, then for every fractional
    support guess F and every integral target b* in the box that some
    z outside F reaches within the remaining budget, the exact box least
    squares on F.  The zero vector and the rounded relaxation are scored too.
    """
    config = SolverConfig() if config is None else config
    config.check()
    instance.check()
    started = time.perf_counter()
    notes: typing.List[str] = []
    heuristic = False

    epsilon = default_epsilon(instance) if config.epsilon is None else float(config.epsilon)
    try:
        relaxed = solve_relaxation(instance, epsilon, config.max_iters, config.variant)
    except IterationBudgetError as err:
        relaxed = err.best
        epsilon = max(epsilon, math.sqrt(relaxed.certified_gap))
        notes.append(f'relaxation not certified in {config.max_iters} iterations; box widened to epsilon={epsilon:.6g}')
        ez.logger.warning(notes[-1])

    x_exact = reduce_to_few_fractionals(instance, relaxed.x_bar, exact = True)
    x_reduced = np.array([float(v) for v in x_exact])
    bounds = compute_bounds(instance, epsilon, x_reduced, config.radius_mode)
    if config.radius_mode == 'column':
        heuristic = True
        notes.append('column-norm proximity radius in use; optimality is not guaranteed')
        ez.logger.warning(notes[-1])

    center = instance.A @ relaxed.x_bar
    radius = bounds.box_radius
    limits = reachable_box(instance)
    n_box = box_size(center, radius, limits)
    if n_box > config.enum_cap:
        raise EnumerationCapError(
            f'proximity box holds {n_box} targets, above the enumeration cap {config.enum_cap}'
        )
    ez.logger.info(f'proximity box: radius {radius:.4g}, {n_box} integral targets')

    incumbent = best_of([
        SparseSolution.zeros(instance),
        round_fractional_part(instance, x_exact, config.round_order),
    ])

    sizes = guess_sizes(instance, config)
    total = sum(math.comb(instance.n, k) for k in sizes)
    if total > config.support_guess_cap:
        heuristic = True
        notes.append(f'{total} support guesses truncated to {config.support_guess_cap}')
        ez.logger.warning(notes[-1])

    chunks = _fused_chunks(instance, config, sizes) if config.fused_box else _literal_chunks(instance, config, sizes)
    work = functools.partial(_run_chunk, instance, config, center, radius, limits, incumbent)

    # every chunk starts from the same incumbent, so the merge never depends on scheduling
    if config.threads > 1 and len(chunks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers = min(config.threads, len(chunks))) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(chunk) for chunk in chunks]

    best = incumbent
    stats = SolveStats()
    for solution, chunk_stats in results:
        if is_better(solution, best):
            best = solution
        stats = stats.merge(chunk_stats)
    stats.wall_time = time.perf_counter() - started

    ez.logger.info(
        f'exact solve: objective {best.objective:.10g}, support {len(best.support)}, '
        f'{stats.support_guesses} guesses, {stats.extensions} extensions in {stats.wall_time:.3f}s'
    )
    return SolveReport(best, relaxed, bounds, stats, epsilon, heuristic, tuple(notes))


def solve_oracle(instance: ProblemInstance, cap: int = DEFAULT_ORACLE_CAP) -> SparseSolution:
    """ Brute force: exact box least squares on every support of size at most
    sigma, ranked with the same tie-break as solve_exact.
    """
    instance.check()
    n, k = instance.n, instance.sigma_eff
    work = sum(math.comb(n, j) * 3 ** j for j in range(k + 1))
    if work > cap:
        raise EnumerationCapError(f'oracle needs {work} solves over supports of size <= {k}, above the cap {cap}')

    u = instance.upper
    best = None
    supports = itertools.chain.from_iterable(itertools.combinations(range(n), j) for j in range(k + 1))
    for S in supports:
        cols = list(S)
        x = np.zeros(n)
        x[cols] = box_least_squares(instance.A[:, cols], instance.b, u[cols])
        candidate = SparseSolution.from_vector(instance, x)
        if is_better(candidate, best):
            best = candidate
    return best


def solve_m1_fast(instance: ProblemInstance, epsilon: float = 1e-7) -> SparseSolution:
    """ With a single row some optimal relaxation point has at most one
    fractional entry, and that point is already feasible for the sparse problem.
    """
    if instance.m != 1:
        raise PreconditionError(f'solve_m1_fast needs m = 1, got m = {instance.m}')
    relaxed = solve_relaxation(instance, epsilon)
    x = reduce_to_few_fractionals(instance, relaxed.x_bar)
    solution = SparseSolution.from_vector(instance, x)
    if solution.violations(instance):
        raise PreconditionError('; '.join(solution.violations(instance)))
    return solution


def solve_greedy(instance: ProblemInstance) -> SparseSolution:
    """ Orthogonal matching pursuit with bounded least squares on the support.
    A baseline only; no optimality claim.
    """
    A = instance.A.astype(float)
    b = instance.b
    u = instance.upper
    norms = np.linalg.norm(A, axis = 0)

    support: typing.List[int] = []
    x = np.zeros(instance.n)
    for _ in range(instance.sigma_eff):
        r = b - A @ x
        score = np.full(instance.n, -np.inf)
        usable = norms > 0
        score[usable] = (A[:, usable].T @ r) / norms[usable]
        score[support] = -np.inf
        j = int(np.argmax(score))
        if not score[j] > ZERO_TOL:
            break
        support.append(j)
        cols = sorted(support)
        result = lsq_linear(A[:, cols], b, bounds = (np.zeros(len(cols)), u[cols]), method = 'bvls')
        x = np.zeros(instance.n)
        x[cols] = result.x
    return SparseSolution.from_vector(instance, x)
