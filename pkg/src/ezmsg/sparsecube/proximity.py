import math
import typing

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import numpy.typing as npt

from .core import (
    ProblemInstance,
    SparseSolution,
    EnumerationCapError,
    PreconditionError,
)

DEFAULT_ENUM_CAP = 100_000_000

# Radius inflation before ceil/floor so rounding dust never drops a valid b*
BOX_SLACK = 1e-6

CandidateRHS = typing.Tuple[int, ...]


@dataclass(frozen = True)
class ProximityBound:
    radius_exact: float  # 2 m^{3/2} A_max, around the exact relaxation optimum
    radius_eps: float  # 3 m^{3/2} A_max + eps, for the integral part around x_bar
    u_factor: float  # max(u), 1 without upper bounds
    epsilon: float
    mode: str = 'standard'

    @property
    def box_radius(self) -> float:
        """ Per-coordinate radius actually enumerated around A x_bar """
        return self.radius_eps * self.u_factor

    @property
    def realized_radius(self) -> float:
        """ Allowed ||A x* - A x_bar||_inf for the best solution """
        return self.radius_exact * self.u_factor + self.epsilon


def column_norm_radius(instance: ProblemInstance, x_hat: npt.ArrayLike) -> float:
    """ 2 ||x_hat - floor(x_hat)||_1 max_i ||A_i||_2, the sharper proximity form """
    x_hat = np.asarray(x_hat, dtype = float)
    frac = float(np.sum(x_hat - np.floor(x_hat)))
    col_norm = float(np.max(np.linalg.norm(instance.A.astype(float), axis = 0)))
    return 2.0 * frac * col_norm


def compute_bounds(
    instance: ProblemInstance,
    epsilon: float,
    x_hat: typing.Optional[npt.ArrayLike] = None,
    mode: str = 'standard'
) -> ProximityBound:
    """ Proximity radii.  mode 'column' swaps the 2 m^{3/2} A_max term for the
    column-norm form evaluated at x_hat (reduced to at most m fractionals).
    """
    if epsilon < 0:
        raise PreconditionError(f'epsilon must be nonnegative, got {epsilon}')

    m = instance.m
    a_max = instance.a_max
    radius_exact = 2.0 * m ** 1.5 * a_max
    radius_eps = 3.0 * m ** 1.5 * a_max + epsilon

    if mode == 'column':
        if x_hat is None:
            raise PreconditionError('column radius mode needs x_hat')
        radius_exact = min(radius_exact, column_norm_radius(instance, np.asarray(x_hat) / instance.upper))
        radius_eps = radius_exact + m * a_max + epsilon
    elif mode != 'standard':
        raise PreconditionError(f'unknown radius mode: {mode}')

    u_factor = float(np.max(instance.u)) if instance.has_bounds else 1.0
    return ProximityBound(radius_exact, radius_eps, u_factor, float(epsilon), mode)


Limits = typing.Optional[typing.Tuple[npt.ArrayLike, npt.ArrayLike]]


def reachable_box(instance: ProblemInstance) -> typing.Tuple[npt.NDArray, npt.NDArray]:
    """ Per-row range of A z over integral z in [0, u] with ||z||_0 <= sigma.
    No candidate right-hand side outside it can have a witness.
    """
    contrib = instance.A * np.asarray(instance.upper_int, dtype = np.int64)[None, :]
    k = instance.sigma_eff
    lo = np.sort(np.minimum(contrib, 0), axis = 1)[:, :k].sum(axis = 1)
    hi = -np.sort(-np.maximum(contrib, 0), axis = 1)[:, :k].sum(axis = 1)
    return lo.astype(np.int64), hi.astype(np.int64)


def box_bounds(center: npt.ArrayLike, radius: float, limits: Limits = None) -> typing.Tuple[npt.NDArray, npt.NDArray]:
    """ Integer corners of the closed box center +- radius, intersected with limits """
    if radius < 0:
        raise PreconditionError(f'radius must be nonnegative, got {radius}')
    center = np.asarray(center, dtype = float)
    lo = np.ceil(center - radius - BOX_SLACK).astype(np.int64)
    hi = np.floor(center + radius + BOX_SLACK).astype(np.int64)
    if limits is not None:
        lo = np.maximum(lo, np.asarray(limits[0], dtype = np.int64))
        hi = np.minimum(hi, np.asarray(limits[1], dtype = np.int64))
    return lo, hi


def box_size(center: npt.ArrayLike, radius: float, limits: Limits = None) -> int:
    lo, hi = box_bounds(center, radius, limits)
    return math.prod(max(int(h) - int(l) + 1, 0) for l, h in zip(lo, hi))


def enumerate_box(
    center: npt.ArrayLike,
    radius: float,
    cap: int = DEFAULT_ENUM_CAP,
    start: int = 0,
    stop: typing.Optional[int] = None,
    limits: Limits = None
) -> typing.Iterator[CandidateRHS]:
    """ Every integer point of the box, lexicographically (last coordinate fastest).
    [start, stop) selects a slice of that order so the range can be split
    between workers.  Refuses up front when the box exceeds cap.
    """
    lo, hi = box_bounds(center, radius, limits)
    widths = [max(int(h) - int(l) + 1, 0) for l, h in zip(lo, hi)]
    total = math.prod(widths)
    if total > cap:
        raise EnumerationCapError(
            f'box holds {total} integer points, above the enumeration cap {cap}; '
            'the instance is outside the fixed-m regime (raise --enum-cap to force it)'
        )
    stop = total if stop is None else min(stop, total)
    return _walk_box([int(l) for l in lo], widths, start, stop)


def _walk_box(lo: typing.List[int], widths: typing.List[int], start: int, stop: int) -> typing.Iterator[CandidateRHS]:
    for index in range(start, stop):
        point = [0] * len(widths)
        for i in reversed(range(len(widths))):
            index, offset = divmod(index, widths[i])
            point[i] = lo[i] + offset
        yield tuple(point)


def fractional_indices(instance: ProblemInstance, x: typing.Sequence[Fraction]) -> typing.List[int]:
    u = instance.upper_int
    return [i for i, xi in enumerate(x) if 0 < xi < u[i]]


def rounded_fractional_values(
    instance: ProblemInstance,
    x_hat: typing.Union[npt.ArrayLike, typing.Sequence[Fraction]],
    order: str = 'index'
) -> typing.List[Fraction]:
    """ The rounding from the proximity argument, in exact arithmetic.

    Works on the scaled coordinates t_i = x_i / u_i: with F the fractional
    set and k = sum_F t_i, floor(k) coordinates of F go to 1, the next one
    to k - floor(k), the rest to 0.  sum_F t_i is preserved exactly.
    """
    xs = [v if isinstance(v, Fraction) else Fraction(float(v)) for v in x_hat]
    u = instance.upper_int
    F = fractional_indices(instance, xs)
    if len(F) > instance.m:
        raise PreconditionError(
            f'{len(F)} fractional entries, at most m={instance.m} allowed; '
            'reduce_to_few_fractionals first'
        )

    t = {i: xs[i] / u[i] for i in F}
    if order == 'value':
        F = sorted(F, key = lambda i: (-t[i], i))
    elif order != 'index':
        raise PreconditionError(f'unknown rounding order: {order}')

    k = sum(t.values(), Fraction(0))
    whole = math.floor(k)
    y = list(xs)
    for rank, i in enumerate(F):
        if rank < whole:
            y[i] = Fraction(u[i])
        elif rank == whole:
            y[i] = (k - whole) * u[i]
        else:
            y[i] = Fraction(0)
    return y


def round_fractional_part(
    instance: ProblemInstance,
    x_hat: typing.Union[npt.ArrayLike, typing.Sequence[Fraction]],
    order: str = 'index'
) -> SparseSolution:
    y = rounded_fractional_values(instance, x_hat, order)
    return SparseSolution.from_vector(instance, np.array([float(v) for v in y]))


def in_hyperplane(instance: ProblemInstance, x_hat: npt.ArrayLike, y: npt.ArrayLike) -> float:
    """ (b - A x_hat)^T (A y - A x_hat); zero when A y lies on the tangent hyperplane at A x_hat """
    A = instance.A.astype(float)
    ax = A @ np.asarray(x_hat, dtype = float)
    return float((instance.b - ax) @ (A @ np.asarray(y, dtype = float) - ax))
