import math
import typing

from dataclasses import dataclass
from fractions import Fraction

import ezmsg.core as ez
import numpy as np
import numpy.typing as npt
import scipy.linalg

from .core import (
    ProblemInstance,
    IterationBudgetError,
    PreconditionError,
    objective,
)

DEFAULT_MAX_ITERS = 1_000_000

# How often (in iterations) the face polish is attempted
POLISH_EVERY = 20

# Thresholds (relative to u_i) used to read off the face of an iterate
FACE_TOLERANCES = (1e-12, 1e-9, 1e-6, 1e-3)

Vertex = typing.FrozenSet[int]


@dataclass(frozen = True, eq = False)
class RelaxedSolution:
    """ Feasible point of the relaxation with a certified suboptimality gap
    on the squared objective: ||b - A x_bar||^2 - ||b - A x_hat||^2 <= certified_gap
    """
    x_bar: npt.NDArray
    certified_gap: float
    iterations: int
    objective: float


def default_epsilon(instance: ProblemInstance) -> float:
    """ sqrt(m) * A_max, the closeness the proximity box is built around """
    eps = math.sqrt(instance.m) * instance.a_max
    return eps if eps > 0 else 1.0


def linear_minimization(
    gradient: npt.ArrayLike,
    sigma: int,
    u: typing.Optional[npt.ArrayLike] = None
) -> npt.NDArray:
    """ Exact minimizer of gradient^T s over {0 <= s <= u, sum(s_i / u_i) <= sigma}.
    Vertices put s_i = u_i on at most sigma coordinates, so it is enough to take
    the sigma most negative u_i * gradient_i contributions.
    """
    g = np.asarray(gradient, dtype = float)
    u = np.ones_like(g) if u is None else np.asarray(u, dtype = float)
    s = np.zeros_like(g)
    idx = _vertex_indices(g, int(sigma), u)
    s[list(idx)] = u[list(idx)]
    return s


def _vertex_indices(g: npt.NDArray, sigma: int, u: npt.NDArray) -> Vertex:
    weights = u * g
    negative = np.flatnonzero(weights < 0)
    order = negative[np.argsort(weights[negative], kind = 'stable')]
    return frozenset(int(i) for i in order[:max(sigma, 0)])


def _gradient(instance: ProblemInstance, x: npt.NDArray) -> npt.NDArray:
    return 2.0 * (instance.A.T @ (instance.A @ x - instance.b))


def frank_wolfe_gap(instance: ProblemInstance, x: npt.ArrayLike) -> float:
    """ max_{s in P} grad f(x)^T (x - s), an upper bound on f(x) - f(x_hat) """
    x = np.asarray(x, dtype = float)
    g = _gradient(instance, x)
    s = linear_minimization(g, instance.sigma_eff, instance.upper)
    return max(float(g @ (x - s)), 0.0)


def certificate(instance: ProblemInstance, x: npt.ArrayLike) -> float:
    """ min(Frank-Wolfe gap, f(x)); both bound f(x) - f(x_hat) since f >= 0.
    The second one still certifies exact fits whose gap is lost to rounding.
    """
    r = instance.A @ np.asarray(x, dtype = float) - instance.b
    return min(frank_wolfe_gap(instance, x), float(r @ r))


def separation_margin(instance: ProblemInstance, x_bar: npt.ArrayLike, y: npt.ArrayLike) -> float:
    """ (b - A x_bar)^T (A y - A x_bar); <= 0 for every feasible y at the optimum """
    A = instance.A
    ax = A @ np.asarray(x_bar, dtype = float)
    return float((instance.b - ax) @ (A @ np.asarray(y, dtype = float) - ax))


def exact_budget(x: npt.ArrayLike, u: npt.ArrayLike) -> Fraction:
    """ sum(x_i / u_i) in exact arithmetic """
    return sum((Fraction(float(xi)) / int(ui) for xi, ui in zip(x, u)), Fraction(0))


def make_feasible(x: npt.ArrayLike, u: npt.NDArray, sigma: int) -> npt.NDArray:
    """ Clip to the box and shrink onto the budget so that feasibility holds
    exactly (in rational arithmetic on the stored doubles), not within a tolerance.
    """
    x = np.clip(np.asarray(x, dtype = float), 0.0, u)
    total = float(np.sum(x / u))
    if total > sigma:
        x = x * (sigma / total)
    if total > sigma * (1.0 - 1e-9):
        while exact_budget(x, u) > sigma:
            x = np.nextafter(x, 0.0)
    return x


def _face_candidates(
    instance: ProblemInstance,
    x: npt.NDArray,
    tol: float
) -> typing.Iterator[npt.NDArray]:
    """ Least-squares solutions on the face of P the iterate appears to lie on:
    once with the budget free and once with it held tight.
    """
    A, b, u = instance.A, instance.b, instance.upper
    sigma = instance.sigma_eff

    at_upper = x >= u * (1.0 - tol)
    at_zero = (x <= u * tol) & ~at_upper
    free = np.flatnonzero(~(at_upper | at_zero))

    base = np.where(at_upper, u, 0.0)
    slack = sigma - float(np.count_nonzero(at_upper))
    if slack < 0:
        return

    if free.size == 0:
        yield base
        return

    A_free = A[:, free].astype(float)
    rhs = b - A @ base

    y = scipy.linalg.lstsq(A_free, rhs, check_finite = False)[0]
    cand = base.copy()
    cand[free] = y
    yield cand

    # budget tight: KKT system of min ||A_F y - rhs||^2 s.t. sum(y / u_F) = slack
    w = 1.0 / u[free]
    k = free.size
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = A_free.T @ A_free
    kkt[:k, k] = w
    kkt[k, :k] = w
    kkt_rhs = np.concatenate([A_free.T @ rhs, [slack]])
    sol = scipy.linalg.lstsq(kkt, kkt_rhs, check_finite = False)[0]
    cand = base.copy()
    cand[free] = sol[:k]
    yield cand


def _polish(
    instance: ProblemInstance,
    x: npt.NDArray,
    target_gap: float
) -> typing.Optional[typing.Tuple[npt.NDArray, float]]:
    u = instance.upper
    sigma = instance.sigma_eff
    for tol in FACE_TOLERANCES:
        for cand in _face_candidates(instance, x, tol):
            if np.any(cand < -1e-9 * u) or np.any(cand > u * (1.0 + 1e-9)):
                continue
            cand = make_feasible(cand, u, sigma)
            gap = certificate(instance, cand)
            if gap <= target_gap:
                return cand, gap
    return None


def solve_relaxation(
    instance: ProblemInstance,
    epsilon: typing.Optional[float] = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    variant: str = 'away',
    polish: bool = True
) -> RelaxedSolution:
    """ Solve min ||Ax - b||_2 over P = {0 <= x <= u, sum(x_i / u_i) <= sigma}
    until the Frank-Wolfe gap certifies epsilon-closeness (gap <= epsilon^2).

    variant 'vanilla' is plain Frank-Wolfe; 'away' (default) also takes
    away steps over the active vertex set, which is what makes tight gaps
    reachable in practice.  Either way exact line search is used, and every
    so often the face the iterate sits on is solved directly ("polish").
    """
    if epsilon is None:
        epsilon = default_epsilon(instance)
    if not epsilon > 0:
        raise PreconditionError(f'epsilon must be positive, got {epsilon}')
    if variant not in ('away', 'vanilla'):
        raise PreconditionError(f'unknown Frank-Wolfe variant: {variant}')

    target = float(epsilon) ** 2
    A = instance.A.astype(float)
    b = instance.b
    u = instance.upper
    sigma = instance.sigma_eff

    # x is carried alongside its decomposition into vertices of P
    # (a vertex is the set of coordinates sitting at their upper bound)
    x = np.zeros(instance.n)
    weights: typing.Dict[Vertex, float] = {frozenset(): 1.0}

    def vertex_vector(v: Vertex) -> npt.NDArray:
        s = np.zeros(instance.n)
        idx = list(v)
        s[idx] = u[idx]
        return s

    gap = math.inf
    it = 0
    for it in range(max_iters):
        r = A @ x - b
        g = 2.0 * (A.T @ r)

        fw_vertex = _vertex_indices(g, sigma, u)
        s = vertex_vector(fw_vertex)
        fw_gap = max(float(g @ (x - s)), 0.0)
        gap = min(fw_gap, float(r @ r))

        if gap <= target:
            break

        if polish and it % POLISH_EVERY == 0:
            polished = _polish(instance, x, target)
            if polished is not None:
                x, gap = polished
                ez.logger.debug(f'relaxation polished onto face at iteration {it}')
                break

        away_vertex = None
        if variant == 'away' and len(weights) > 1:
            away_vertex = max(weights, key = lambda v: (float(g @ vertex_vector(v)), sorted(v)))
            away_gap = float(g @ (vertex_vector(away_vertex) - x))
            if away_gap <= fw_gap:
                away_vertex = None

        if away_vertex is None:
            d = s - x
            step_max = 1.0
        else:
            d = x - vertex_vector(away_vertex)
            w_away = weights[away_vertex]
            step_max = w_away / (1.0 - w_away)

        Ad = A @ d
        curvature = float(Ad @ Ad)
        slope = float(r @ Ad)
        step = step_max if curvature <= 0 else min(max(-slope / curvature, 0.0), step_max)

        if step <= 0:
            # numerically stalled; only the polish can still certify
            polished = _polish(instance, x, target) if polish else None
            if polished is not None:
                x, gap = polished
            else:
                ez.logger.warning(f'relaxation stalled at iteration {it} with gap {gap:.3e}')
            break

        x = x + step * d

        if away_vertex is None:
            if step >= 1.0:
                weights = {fw_vertex: 1.0}
            else:
                weights = {v: w * (1.0 - step) for v, w in weights.items()}
                weights[fw_vertex] = weights.get(fw_vertex, 0.0) + step
        else:
            weights = {v: w * (1.0 + step) for v, w in weights.items()}
            if step >= step_max:
                del weights[away_vertex]
            else:
                weights[away_vertex] -= step

    x = make_feasible(x, u, sigma)
    gap = certificate(instance, x)
    result = RelaxedSolution(x, gap, it + 1, objective(instance, x))

    if gap > target:
        raise IterationBudgetError(
            f'iteration budget exhausted after {max_iters} iterations (gap {gap:.3e} > {target:.3e})',
            best = result
        )

    ez.logger.debug(f'relaxation certified: gap {gap:.3e} <= {target:.3e} in {it + 1} iterations')
    return result


def _kernel_vector(M: typing.List[typing.List[Fraction]]) -> typing.Optional[typing.List[Fraction]]:
    """ One nonzero solution of M d = 0 by rational row reduction, or None """
    rows = [list(row) for row in M]
    n_rows = len(rows)
    n_cols = len(rows[0]) if rows else 0

    pivots: typing.List[typing.Tuple[int, int]] = []
    free_col = None
    piv_r = 0
    for piv_c in range(n_cols):
        sel = next((r for r in range(piv_r, n_rows) if rows[r][piv_c] != 0), None)
        if sel is None:
            if free_col is None:
                free_col = piv_c
            continue
        rows[piv_r], rows[sel] = rows[sel], rows[piv_r]
        fp = rows[piv_r][piv_c]
        rows[piv_r] = [v / fp for v in rows[piv_r]]
        for r in range(n_rows):
            if r != piv_r and rows[r][piv_c] != 0:
                fr = rows[r][piv_c]
                rows[r] = [a - fr * p for a, p in zip(rows[r], rows[piv_r])]
        pivots.append((piv_r, piv_c))
        piv_r += 1

    if free_col is None:
        return None

    d = [Fraction(0)] * n_cols
    d[free_col] = Fraction(1)
    for r, c in pivots:
        d[c] = -rows[r][free_col]
    return d


def reduce_to_few_fractionals(
    instance: ProblemInstance,
    x: npt.ArrayLike,
    exact: bool = False
) -> typing.Union[npt.NDArray, typing.List[Fraction]]:
    """ Walk along kernel directions of A until at most m coordinates are
    strictly between their bounds.

    Arithmetic is rational throughout, so Ax is preserved exactly and the
    budget sum(x_i / u_i) never increases.  Coordinates at zero never move,
    so the support never grows either.  Pass exact=True to get the Fractions.
    """
    xs = [v if isinstance(v, Fraction) else Fraction(float(v)) for v in x]
    if len(xs) != instance.n:
        raise PreconditionError(f'x must have length n={instance.n}, got {len(xs)}')

    u = [Fraction(v) for v in instance.upper_int]
    budget = sum((xi / ui for xi, ui in zip(xs, u)), Fraction(0))
    if any(xi < 0 or xi > ui for xi, ui in zip(xs, u)) or budget > instance.sigma_eff:
        raise PreconditionError('x is not feasible for the relaxation')

    A = [[int(v) for v in row] for row in instance.A]
    m = instance.m

    while True:
        fractional = [i for i in range(instance.n) if 0 < xs[i] < u[i]]
        if len(fractional) <= m:
            break

        cols = fractional[:m + 1]
        d = _kernel_vector([[Fraction(A[r][c]) for c in cols] for r in range(m)])
        assert d is not None, 'm x (m+1) system always has a kernel'

        drift = sum((di / u[c] for di, c in zip(d, cols)), Fraction(0))
        if drift > 0 or (drift == 0 and next(di for di in d if di != 0) < 0):
            d = [-di for di in d]

        step = min(
            (u[c] - xs[c]) / di if di > 0 else xs[c] / -di
            for di, c in zip(d, cols) if di != 0
        )
        for di, c in zip(d, cols):
            xs[c] += step * di
            # snap whatever reached a bound onto it exactly
            if xs[c] <= 0:
                xs[c] = Fraction(0)
            elif xs[c] >= u[c]:
                xs[c] = u[c]

    if exact:
        return xs
    return np.array([float(v) for v in xs])
