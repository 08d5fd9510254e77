import math
import typing

from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt

# Entries with |x_i| <= ZERO_TOL are stored as exact zeros
ZERO_TOL = 1e-9

# Relative tolerance under which two objectives are considered tied
TIE_RTOL = 1e-12


class SparseCubeError(Exception):
    """ Base class for everything this package raises on purpose """


class InstanceError(SparseCubeError, ValueError):
    """ Instance failed validation (or dimensions don't line up) """

    def __init__(self, violations: typing.Iterable[str]):
        self.violations = list(violations)
        super().__init__('; '.join(self.violations))


class PreconditionError(SparseCubeError, ValueError):
    pass


class IterationBudgetError(SparseCubeError, RuntimeError):
    """ Relaxation ran out of iterations before certification.
    The best iterate (and its gap) rides along for diagnostics.
    """

    def __init__(self, message: str, best: typing.Any):
        self.best = best
        super().__init__(message)


class EnumerationCapError(SparseCubeError, RuntimeError):
    pass


class RejectionBudgetError(SparseCubeError, RuntimeError):
    pass


@dataclass(frozen = True)
class ValidationResult:
    violations: typing.Tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return len(self.violations) == 0

    def __bool__(self) -> bool:
        return self.valid


def _frozen(a: typing.Any, dtype: typing.Any = None) -> npt.NDArray:
    arr = np.array(a, dtype = dtype)
    arr.setflags(write = False)
    return arr


@dataclass(frozen = True, eq = False)
class ProblemInstance:
    """ min ||Ax - b||_2  s.t.  0 <= x <= u, ||x||_0 <= sigma

    Construct through `ProblemInstance.create` to get a validated instance
    with integer A; the bare constructor only freezes whatever it is given
    (so that `validate` can report on it).
    """
    A: npt.NDArray
    b: npt.NDArray
    sigma: int
    u: typing.Optional[npt.NDArray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, 'A', _frozen(self.A))
        object.__setattr__(self, 'b', _frozen(self.b, dtype = float))
        if self.u is not None:
            object.__setattr__(self, 'u', _frozen(self.u))

    @classmethod
    def create(
        cls,
        A: typing.Any,
        b: typing.Any,
        sigma: int,
        u: typing.Optional[typing.Any] = None
    ) -> 'ProblemInstance':
        instance = cls(A, b, sigma, u)
        result = validate(instance)
        if not result:
            raise InstanceError(result.violations)
        return cls(
            np.asarray(instance.A).astype(np.int64),
            instance.b,
            int(sigma),
            None if u is None else np.asarray(instance.u).astype(np.int64)
        )

    @property
    def m(self) -> int:
        return int(self.A.shape[0])

    @property
    def n(self) -> int:
        return int(self.A.shape[1])

    @property
    def sigma_eff(self) -> int:
        """ sigma clamped to n; ||x||_0 <= n always """
        return min(int(self.sigma), self.n)

    @property
    def has_bounds(self) -> bool:
        return self.u is not None

    @property
    def upper(self) -> npt.NDArray:
        """ Upper bounds as floats (all ones without explicit bounds) """
        if self.u is None:
            return np.ones(self.n)
        return self.u.astype(float)

    @property
    def upper_int(self) -> typing.Tuple[int, ...]:
        if self.u is None:
            return (1,) * self.n
        return tuple(int(v) for v in self.u)

    @property
    def a_max(self) -> int:
        return inf_norm(self.A)

    def with_target(self, b: typing.Any) -> 'ProblemInstance':
        return replace(self, b = b)

    def with_sigma(self, sigma: int) -> 'ProblemInstance':
        return replace(self, sigma = int(sigma))

    def without_bounds(self) -> 'ProblemInstance':
        return replace(self, u = None)

    def check(self) -> None:
        result = validate(self)
        if not result:
            raise InstanceError(result.violations)


def inf_norm(A: npt.ArrayLike) -> int:
    """ Largest absolute entry of A (the max-entry reading of ||A||_inf) """
    A = np.asarray(A)
    if A.size == 0:
        return 0
    return int(np.max(np.abs(A)))


def validate(instance: ProblemInstance) -> ValidationResult:
    violations: typing.List[str] = []

    A = np.asarray(instance.A)
    if A.ndim != 2:
        violations.append(f'A must be a 2-D matrix, got {A.ndim} dimensions')
        return ValidationResult(tuple(violations))

    m, n = A.shape
    if m < 1 or n < 1:
        violations.append(f'A must have at least one row and one column, got {m}x{n}')

    if not np.issubdtype(A.dtype, np.number) or np.issubdtype(A.dtype, np.complexfloating):
        violations.append('A must be numeric')
    elif not np.all(np.isfinite(A)):
        violations.append('A must be finite')
    elif not np.array_equal(A, np.round(A)):
        violations.append('A must be integral')

    b = np.asarray(instance.b)
    if b.shape != (m,):
        violations.append(f'b must have length m={m}, got shape {b.shape}')
    elif not np.all(np.isfinite(b)):
        violations.append('b must be finite')

    sigma = instance.sigma
    if isinstance(sigma, (bool, np.bool_)) or not float(sigma).is_integer():
        violations.append('sigma must be an integer')
    elif sigma < 1:
        violations.append('sigma must be ≥ 1')

    if instance.u is not None:
        u = np.asarray(instance.u)
        if u.shape != (n,):
            violations.append(f'u must have length n={n}, got shape {u.shape}')
        elif not np.all(np.isfinite(u)) or not np.array_equal(u, np.round(u)):
            violations.append('u must be integral')
        elif np.any(u < 1):
            violations.append('u must be ≥ 1')

    return ValidationResult(tuple(violations))


def _check_length(instance: ProblemInstance, x: npt.NDArray) -> None:
    if x.shape != (instance.n,):
        raise InstanceError([f'x must have length n={instance.n}, got shape {x.shape}'])


def residual(instance: ProblemInstance, x: npt.ArrayLike) -> npt.NDArray:
    x = np.asarray(x, dtype = float)
    _check_length(instance, x)
    return instance.A @ x - instance.b


def objective(instance: ProblemInstance, x: npt.ArrayLike) -> float:
    """ ||Ax - b||_2 with an exactly rounded sum of squares """
    r = residual(instance, x)
    return math.sqrt(math.fsum(r * r))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """ The one way randomness enters the package.
    Extra integers derive independent streams (e.g. per trial) so results
    don't depend on which worker ran what.
    """
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


@dataclass(frozen = True, eq = False)
class SparseSolution:
    x: npt.NDArray
    support: typing.Tuple[int, ...]
    objective: float

    @classmethod
    def from_vector(cls, instance: ProblemInstance, x: npt.ArrayLike) -> 'SparseSolution':
        x = np.array(x, dtype = float)
        _check_length(instance, x)
        x[np.abs(x) <= ZERO_TOL] = 0.0
        x = np.clip(x, 0.0, instance.upper)
        support = tuple(int(i) for i in np.flatnonzero(x))
        return cls(_frozen(x), support, objective(instance, x))

    @classmethod
    def zeros(cls, instance: ProblemInstance) -> 'SparseSolution':
        return cls.from_vector(instance, np.zeros(instance.n))

    def tie_key(self) -> typing.Tuple:
        return (len(self.support), self.support, tuple(self.x.tolist()))

    def violations(self, instance: ProblemInstance) -> typing.List[str]:
        problems = []
        if len(self.support) > instance.sigma_eff:
            problems.append(f'support {len(self.support)} exceeds sigma {instance.sigma_eff}')
        if np.any(self.x < 0) or np.any(self.x > instance.upper):
            problems.append('x outside [0, u]')
        if self.support != tuple(int(i) for i in np.flatnonzero(self.x)):
            problems.append('support does not match nonzeros of x')
        recomputed = objective(instance, self.x)
        if abs(recomputed - self.objective) > 1e-12 * max(1.0, recomputed):
            problems.append(f'objective {self.objective} != recomputed {recomputed}')
        return problems


def is_better(
    candidate: typing.Optional[SparseSolution],
    incumbent: typing.Optional[SparseSolution]
) -> bool:
    """ Deterministic order: objective, then support size, then support, then x """
    if candidate is None:
        return False
    if incumbent is None:
        return True
    scale = max(1.0, incumbent.objective)
    if candidate.objective < incumbent.objective - TIE_RTOL * scale:
        return True
    if candidate.objective > incumbent.objective + TIE_RTOL * scale:
        return False
    return candidate.tie_key() < incumbent.tie_key()


def best_of(solutions: typing.Iterable[typing.Optional[SparseSolution]]) -> typing.Optional[SparseSolution]:
    best = None
    for sol in solutions:
        if is_better(sol, best):
            best = sol
    return best


def is_integral(x: npt.ArrayLike, upper: npt.ArrayLike, tol: float = ZERO_TOL) -> bool:
    """ Every coordinate sits on one of its bounds """
    x = np.asarray(x, dtype = float)
    upper = np.asarray(upper, dtype = float)
    return bool(np.all((np.abs(x) <= tol) | (np.abs(x - upper) <= tol)))

