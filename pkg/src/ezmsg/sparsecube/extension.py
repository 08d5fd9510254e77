import itertools
import math
import typing

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg

from .core import (
    ProblemInstance,
    SparseSolution,
    PreconditionError,
)

# 3^20 guesses is already far past anything useful
HARD_CAP = 20

# Free coordinates may overshoot their bounds by this much before being clamped
BOUND_TOL = 1e-9

TIE_TOL = 1e-12

# Per-coordinate codes, ordered as the tie-break prefers them
AT_ZERO, FREE, AT_UPPER = 0, 1, 2


@dataclass(frozen = True)
class ActiveSetGuess:
    S0: typing.Tuple[int, ...]
    S1: typing.Tuple[int, ...]
    free: typing.Tuple[int, ...]

    @classmethod
    def from_code(cls, code: typing.Sequence[int]) -> 'ActiveSetGuess':
        return cls(
            tuple(i for i, c in enumerate(code) if c == AT_ZERO),
            tuple(i for i, c in enumerate(code) if c == AT_UPPER),
            tuple(i for i, c in enumerate(code) if c == FREE),
        )


def active_set_guesses(k: int) -> typing.Iterator[ActiveSetGuess]:
    """ All 3^k guesses, smallest encoding first """
    for code in itertools.product((AT_ZERO, FREE, AT_UPPER), repeat = k):
        yield ActiveSetGuess.from_code(code)


class BoxLeastSquares:
    """ min ||rhs - A_sub g||_2 over 0 <= g <= bounds, for many right-hand sides.

    The minimum-norm least-squares operator of every free block is factored
    once, so each `solve` is a sweep of small matrix products.
    """

    def __init__(
        self,
        A_sub: npt.ArrayLike,
        bounds: typing.Optional[npt.ArrayLike] = None,
        tol: float = BOUND_TOL
    ) -> None:
        A = np.asarray(A_sub, dtype = float)
        if A.ndim != 2:
            raise PreconditionError(f'A_sub must be 2-D, got {A.ndim} dimensions')
        k = A.shape[1]
        if k > HARD_CAP:
            raise PreconditionError(f'{k} columns exceeds the extension hard cap of {HARD_CAP}')

        self.A = A
        self.k = k
        self.bounds = np.ones(k) if bounds is None else np.asarray(bounds, dtype = float)
        self.tol = tol

        self._plans = []
        for guess in active_set_guesses(k):
            fixed = np.zeros(k)
            fixed[list(guess.S1)] = self.bounds[list(guess.S1)]
            free = list(guess.free)
            pinv = scipy.linalg.pinv(A[:, free], check_finite = False) if free else None
            self._plans.append((guess, fixed, A @ fixed, free, pinv))

    def solve(self, rhs: npt.ArrayLike) -> npt.NDArray:
        return self.solve_many(np.asarray(rhs, dtype = float)[None, :])[0][0]

    def solve_many(self, rhs: npt.ArrayLike) -> typing.Tuple[npt.NDArray, npt.NDArray]:
        """ `solve` for an N x m stack of right-hand sides at once.
        Returns the N x k minimizers and their objectives.
        """
        rhs = np.atleast_2d(np.asarray(rhs, dtype = float))
        N = rhs.shape[0]
        best = np.zeros((N, self.k))
        best_obj = np.full(N, math.inf)
        for _, fixed, offset, free, pinv in self._plans:
            G = np.tile(fixed, (N, 1))
            ok = np.ones(N, dtype = bool)
            if free:
                Y = (rhs - offset) @ pinv.T
                ub = self.bounds[free]
                ok = np.all((Y >= -self.tol) & (Y <= ub + self.tol), axis = 1)
                G[:, free] = np.clip(Y, 0.0, ub)
            R = rhs - G @ self.A.T
            obj = np.sqrt(np.sum(R * R, axis = 1))
            # earlier guesses keep ties
            scale = np.where(np.isinf(best_obj), 1.0, np.maximum(1.0, best_obj))
            better = ok & (obj < best_obj - TIE_TOL * scale)
            best[better] = G[better]
            best_obj[better] = obj[better]
        return best, best_obj


def box_least_squares(
    A_sub: npt.ArrayLike,
    rhs: npt.ArrayLike,
    bounds: typing.Optional[npt.ArrayLike] = None,
    tol: float = BOUND_TOL
) -> npt.NDArray:
    return BoxLeastSquares(A_sub, bounds, tol).solve(rhs)


def extend(
    instance: ProblemInstance,
    z: npt.ArrayLike,
    F: typing.Sequence[int],
    plan: typing.Optional[BoxLeastSquares] = None
) -> SparseSolution:
    """ Best x = z + f with supp(f) inside F and 0 <= f <= u.
    `plan` may carry a prebuilt BoxLeastSquares for A[:, F] when many z share F.
    """
    F = [int(i) for i in F]
    if len(F) > HARD_CAP:
        raise PreconditionError(f'|F| = {len(F)} exceeds the extension hard cap of {HARD_CAP}')

    z = np.asarray(z, dtype = float)
    if z.shape != (instance.n,):
        raise PreconditionError(f'z must have length n={instance.n}, got shape {z.shape}')
    u = instance.upper
    if np.any(z < 0) or np.any(z > u) or not np.array_equal(z, np.round(z)):
        raise PreconditionError('z must be integral within [0, u]')
    if F and np.any(z[F] != 0):
        raise PreconditionError('z must vanish on F')
    if np.count_nonzero(z) + len(F) > instance.sigma_eff:
        raise PreconditionError(
            f'support of z ({np.count_nonzero(z)}) plus |F| ({len(F)}) exceeds sigma {instance.sigma_eff}'
        )

    x = z.copy()
    if F:
        if plan is None:
            plan = BoxLeastSquares(instance.A[:, F], u[F])
        rhs = instance.b - instance.A @ z
        x[F] = plan.solve(rhs)
    return SparseSolution.from_vector(instance, x)
