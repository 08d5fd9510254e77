import concurrent.futures
import functools
import math
import time
import typing

from dataclasses import dataclass, field, replace

import ezmsg.core as ez
import numpy as np
import numpy.typing as npt
import scipy.stats

from .core import (
    ProblemInstance,
    IterationBudgetError,
    PreconditionError,
    RejectionBudgetError,
    is_integral,
    make_rng,
    objective,
)
from .relaxation import (
    RelaxedSolution,
    linear_minimization,
    solve_relaxation,
    reduce_to_few_fractionals,
)
from .proximity import round_fractional_part
from .feasibility import FeasibilityQuery, solve_feasibility
from .solver import SolverConfig, solve_exact, solve_greedy

# Objective tolerance under which a trial counts as an exact fit
EXACT_TOL = 1e-6

# Relaxation solves inside an experiment are certified to gap FAR_EPSILON^2
FAR_EPSILON = 1e-5

PROPOSAL_BATCH = 4096

# How far A x_bar may sit from an integer vector and still count as landing on it
VERTEX_TOL = 1e-4


class SamplingConfig(ez.Settings):
    instance: ProblemInstance
    lam: float = 1.0
    trials: int = 500
    seed: int = 0
    tolerance: float = 1e-7 # membership slack for dist(b, Q) <= lam
    rejection_budget: int = 1_000_000 # proposals per sample
    relax_iters: int = 100_000
    threads: int = 1
    solver: SolverConfig = field(default_factory = SolverConfig)


class InteriorConfig(ez.Settings):
    instance: ProblemInstance
    trials: int = 100
    seed: int = 0
    rejection_budget: int = 1_000_000
    threads: int = 1
    solver: SolverConfig = field(default_factory = SolverConfig)


@dataclass(frozen = True)
class TrialRecord:
    trial: int
    b: typing.Tuple[float, ...]
    objective_relax: float
    objective_exact: float
    integral_optimal: bool # the relaxation optimum is attained by a sparse integral point
    exact: bool # objective_exact <= EXACT_TOL
    proposals: int = 1
    objective_rounded: float = math.inf # rounding of the reduced relaxation point


@dataclass(frozen = True)
class ExperimentReport:
    kind: str
    records: typing.Tuple[TrialRecord, ...]
    frequency: float
    rho: float
    ci_low: float
    ci_high: float
    lam: typing.Optional[float] = None
    acceptance_rate: float = 1.0
    tolerance: float = 0.0
    wall_time: float = 0.0

    @property
    def trials(self) -> int:
        return len(self.records)

    @property
    def halfwidth(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0

    def meets(self, bound: typing.Optional[float] = None, slack: float = 3.0) -> bool:
        """ frequency >= bound - slack * halfwidth (bound defaults to rho) """
        bound = self.rho if bound is None else bound
        return self.frequency >= bound - slack * self.halfwidth


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> typing.Tuple[float, float]:
    if trials < 1:
        raise PreconditionError('need at least one trial for a confidence interval')
    ci = scipy.stats.binomtest(int(successes), int(trials)).proportion_ci(
        confidence_level = confidence, method = 'wilson'
    )
    return float(ci.low), float(ci.high)


def far_target_bound(instance: ProblemInstance, lam: float) -> float:
    """ (lam / (lam + sigma sqrt(m) A_max))^m """
    denom = lam + instance.sigma_eff * math.sqrt(instance.m) * instance.a_max
    if denom <= 0:
        return 1.0
    return (lam / denom) ** instance.m


def lambda_from_multiplier(instance: ProblemInstance, multiplier: float) -> float:
    """ multiplier * m^{3/2} sigma A_max; multiplier 2 makes the bound at least 1/2 """
    return multiplier * instance.m ** 1.5 * instance.sigma_eff * instance.a_max


def random_matrix(m: int, n: int, amax: int, rng: np.random.Generator) -> npt.NDArray:
    return rng.integers(-amax, amax + 1, size = (m, n))


def planted_instance(
    m: int,
    n: int,
    sigma: int,
    amax: int,
    rng: np.random.Generator,
    u: typing.Optional[npt.ArrayLike] = None
) -> ProblemInstance:
    """ b = A x for a random sigma-sparse x in [0, u] """
    A = random_matrix(m, n, amax, rng)
    upper = np.ones(n) if u is None else np.asarray(u, dtype = float)
    k = min(sigma, n)
    support = np.sort(rng.choice(n, size = k, replace = False))
    x = np.zeros(n)
    x[support] = rng.uniform(0.0, 1.0, size = k) * upper[support]
    return ProblemInstance.create(A, A @ x, sigma, u)


def geometric_instance(
    m: int,
    n: int,
    sigma: int,
    amax: int,
    lam: float,
    rng: np.random.Generator,
    rejection_budget: int = 1_000_000
) -> ProblemInstance:
    """ Random A with b drawn uniformly from Q + lam B """
    A = random_matrix(m, n, amax, rng)
    instance = ProblemInstance.create(A, np.zeros(m), sigma)
    b, _ = sample_from_Q_plus_ball(instance, lam, rng, rejection_budget = rejection_budget)
    return instance.with_target(b)


def worst_case_instance(n: int, u: int = 2) -> ProblemInstance:
    """ A = I, sigma = n/2, b = (u/2) 1 with bounds u: the relaxation fits b
    exactly while every sparse point is off by sqrt(n/2) * u/2.
    """
    if n < 2:
        raise PreconditionError(f'worst-case instance needs n >= 2, got {n}')
    return ProblemInstance.create(np.eye(n, dtype = np.int64), np.full(n, u / 2.0), n // 2, np.full(n, u))


def image_bounding_box(instance: ProblemInstance) -> typing.Tuple[npt.NDArray, npt.NDArray]:
    """ Per-coordinate extremes of A x over the relaxation polytope """
    A = instance.A.astype(float)
    lo = np.empty(instance.m)
    hi = np.empty(instance.m)
    for i in range(instance.m):
        lo[i] = A[i] @ linear_minimization(A[i], instance.sigma_eff, instance.upper)
        hi[i] = A[i] @ linear_minimization(-A[i], instance.sigma_eff, instance.upper)
    return lo, hi


def distance_to_image(
    instance: ProblemInstance,
    b: npt.ArrayLike,
    tolerance: float,
    max_iters: int = 100_000
) -> typing.Tuple[float, RelaxedSolution]:
    """ Certified lower estimate of dist(b, Q) with Q = {A x : x in P}.
    The relaxation runs to a squared gap of `tolerance` ** 2, so the estimate
    never exceeds the true distance and falls short of it by at most `tolerance`.
    """
    target = instance.with_target(np.asarray(b, dtype = float))
    try:
        relaxed = solve_relaxation(target, tolerance, max_iters)
    except IterationBudgetError as err:
        relaxed = err.best
    lower = math.sqrt(max(relaxed.objective ** 2 - relaxed.certified_gap, 0.0))
    return lower, relaxed


def sample_from_Q_plus_ball(
    instance: ProblemInstance,
    lam: float,
    rng: np.random.Generator,
    tolerance: float = 1e-7,
    rejection_budget: int = 1_000_000,
    max_iters: int = 100_000
) -> typing.Tuple[npt.NDArray, int]:
    """ Uniform b on Q + lam B by rejection from the bounding box of Q grown by lam.
    Returns the sample and the number of proposals it took.
    """
    if lam < 0:
        raise PreconditionError(f'lambda must be nonnegative, got {lam}')
    lo, hi = image_bounding_box(instance)
    lo, hi = lo - lam, hi + lam

    for proposal in range(1, rejection_budget + 1):
        b = rng.uniform(lo, hi)
        dist, _ = distance_to_image(instance, b, tolerance, max_iters)
        if dist <= lam + tolerance:
            return b, proposal

    raise RejectionBudgetError(
        f'no sample accepted in {rejection_budget} proposals (lambda={lam}); raise the rejection budget'
    )


def sample_shrunk_polytope(
    instance: ProblemInstance,
    rng: np.random.Generator,
    rejection_budget: int = 1_000_000
) -> typing.Tuple[npt.NDArray, int]:
    """ Uniform x on c P with c = (sigma - m + 1) / sigma, by rejection from the box [0, c u] """
    sigma = instance.sigma_eff
    c = (sigma - instance.m + 1) / sigma
    u = instance.upper
    drawn = 0
    while drawn < rejection_budget:
        batch = min(PROPOSAL_BATCH, rejection_budget - drawn)
        X = rng.uniform(0.0, 1.0, size = (batch, instance.n)) * (c * u)
        inside = np.flatnonzero(np.sum(X / u, axis = 1) <= c * sigma)
        if inside.size:
            return X[inside[0]], drawn + int(inside[0]) + 1
        drawn += batch
    raise RejectionBudgetError(f'no point of the shrunk polytope in {rejection_budget} proposals')


def _interior_trial(config: InteriorConfig, trial: int) -> TrialRecord:
    rng = make_rng(config.seed, trial)
    x, proposals = sample_shrunk_polytope(config.instance, rng, config.rejection_budget)
    instance = config.instance.with_target(config.instance.A @ x)
    report = solve_exact(instance, config.solver)
    e = report.best.objective
    reduced = reduce_to_few_fractionals(instance, report.relaxation.x_bar, exact = True)
    rounded = round_fractional_part(instance, reduced, config.solver.round_order)
    return TrialRecord(
        trial, tuple(instance.b.tolist()), report.relaxation.objective, e,
        integral_optimal = relaxation_is_integral(instance, report.relaxation, reduced),
        exact = e <= EXACT_TOL, proposals = proposals, objective_rounded = rounded.objective
    )


def vertex_attains(instance: ProblemInstance, point: npt.ArrayLike, value: float) -> bool:
    """ Some {0, u}-vector with at most sigma nonzeros maps onto the integer
    vector nearest `point` and scores within EXACT_TOL of `value`.
    """
    point = np.asarray(point, dtype = float)
    target = np.round(point)
    if np.max(np.abs(point - target), initial = 0.0) > VERTEX_TOL:
        return False
    upper = np.asarray(instance.upper_int, dtype = np.int64)
    query = FeasibilityQuery(instance.A * upper[None, :], tuple(int(v) for v in target), instance.sigma_eff)
    y = solve_feasibility(query)
    if y is None:
        return False
    return objective(instance, y * upper) - value <= EXACT_TOL


def relaxation_is_integral(
    instance: ProblemInstance,
    relaxed: RelaxedSolution,
    reduced: typing.Sequence
) -> bool:
    """ The relaxation optimum is attained by a sparse integral point: the
    reduced x_bar already is one, or a {0, u}-vector hits A x_bar.
    """
    if is_integral(np.array([float(v) for v in reduced]), instance.upper):
        return True
    return vertex_attains(instance, instance.A @ relaxed.x_bar, relaxed.objective)


def _far_trial(config: SamplingConfig, trial: int) -> TrialRecord:
    rng = make_rng(config.seed, trial)
    b, proposals = sample_from_Q_plus_ball(
        config.instance, config.lam, rng, config.tolerance, config.rejection_budget, config.relax_iters
    )
    instance = config.instance.with_target(b)

    try:
        relaxed = solve_relaxation(instance, FAR_EPSILON, config.relax_iters)
    except IterationBudgetError as err:
        ez.logger.warning(f'trial {trial}: {err}')
        relaxed = err.best
    reduced = reduce_to_few_fractionals(instance, relaxed.x_bar, exact = True)
    rounded = round_fractional_part(instance, reduced, config.solver.round_order)

    report = solve_exact(instance, config.solver)
    e = report.best.objective
    return TrialRecord(
        trial, tuple(b.tolist()), relaxed.objective, e,
        integral_optimal = relaxation_is_integral(instance, relaxed, reduced),
        exact = e <= EXACT_TOL, proposals = proposals, objective_rounded = rounded.objective
    )


def _run_trials(
    trial_fn: typing.Callable[[int], TrialRecord],
    trials: int,
    threads: int
) -> typing.List[TrialRecord]:
    if threads > 1 and trials > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers = min(threads, trials)) as pool:
            return list(pool.map(trial_fn, range(trials)))
    return [trial_fn(t) for t in range(trials)]


def _report(
    kind: str,
    records: typing.List[TrialRecord],
    flag: typing.Callable[[TrialRecord], bool],
    rho: float,
    started: float,
    **kwargs
) -> ExperimentReport:
    hits = sum(1 for r in records if flag(r))
    low, high = wilson_interval(hits, len(records))
    proposals = sum(r.proposals for r in records)
    return ExperimentReport(
        kind, tuple(records), hits / len(records), rho, low, high,
        acceptance_rate = len(records) / proposals if proposals else 1.0,
        wall_time = time.perf_counter() - started,
        **kwargs
    )


def check_interior_exactness(config: InteriorConfig) -> ExperimentReport:
    """ Targets drawn from the shrunk image (sigma - m + 1) / sigma * Q are always
    hit exactly by a sigma-sparse point; reports how often that is observed.
    """
    instance = config.instance
    if instance.sigma_eff < instance.m:
        raise PreconditionError(f'interior experiment needs sigma >= m, got sigma={instance.sigma_eff}, m={instance.m}')
    if config.trials < 1:
        raise PreconditionError('trials must be >= 1')

    started = time.perf_counter()
    records = _run_trials(functools.partial(_interior_trial, config), config.trials, config.threads)
    report = _report('interior', records, lambda r: r.exact, 1.0, started, tolerance = EXACT_TOL)
    ez.logger.info(f'interior: {report.frequency:.3f} exact over {report.trials} trials')
    return report


def check_far_target_probability(config: SamplingConfig) -> ExperimentReport:
    """ Empirical frequency with which the relaxation optimum for b ~ U(Q + lam B)
    is attained by an integral sparse point, next to its lower bound rho.
    """
    if config.trials < 1:
        raise PreconditionError('trials must be >= 1')
    if config.lam < 0:
        raise PreconditionError(f'lambda must be nonnegative, got {config.lam}')

    started = time.perf_counter()
    records = _run_trials(functools.partial(_far_trial, config), config.trials, config.threads)
    rho = far_target_bound(config.instance, config.lam)
    report = _report(
        'far', records, lambda r: r.integral_optimal, rho, started,
        lam = config.lam, tolerance = config.tolerance
    )
    if report.acceptance_rate < 0.01:
        ez.logger.warning(f'low rejection acceptance rate: {report.acceptance_rate:.4f}')
    ez.logger.info(
        f'far (lambda={config.lam:.4g}): frequency {report.frequency:.3f}, rho {rho:.3f}, '
        f'95% CI [{report.ci_low:.3f}, {report.ci_high:.3f}]'
    )
    return report


@dataclass(frozen = True)
class ScalingPoint:
    n: int
    wall_time: float
    dp_states: int
    objective: float
    greedy_objective: float


def loglog_slope(xs: typing.Sequence[float], ys: typing.Sequence[float]) -> float:
    """ Least-squares slope of log y against log x (nonpositive ys are floored) """
    x = np.log(np.asarray(xs, dtype = float))
    y = np.log(np.maximum(np.asarray(ys, dtype = float), 1e-12))
    return float(np.polyfit(x, y, 1)[0])


def scaling_sweep(
    sizes: typing.Sequence[int],
    m: int = 2,
    amax: int = 2,
    sigma: int = 3,
    seed: int = 0,
    solver: typing.Optional[SolverConfig] = None
) -> typing.List[ScalingPoint]:
    """ solve_exact on one random instance per n; b uniform over the image box of A """
    solver = SolverConfig() if solver is None else solver
    points = []
    for n in sizes:
        rng = make_rng(seed, n)
        A = random_matrix(m, n, amax, rng)
        instance = ProblemInstance.create(A, np.zeros(m), sigma)
        lo, hi = image_bounding_box(instance)
        instance = instance.with_target(rng.uniform(lo, hi))
        report = solve_exact(instance, replace(solver, seed = seed))
        greedy = solve_greedy(instance)
        points.append(ScalingPoint(n, report.stats.wall_time, report.stats.dp_states, report.best.objective, greedy.objective))
        ez.logger.info(f'bench n={n}: {report.stats.wall_time:.3f}s, {report.stats.dp_states} states')
    return points
