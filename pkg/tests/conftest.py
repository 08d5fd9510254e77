import itertools
import typing

from pathlib import Path

import numpy as np
import numpy.typing as npt
import pytest

from ezmsg.sparsecube.core import ProblemInstance, make_rng

FIXTURES = Path(__file__).parent / 'fixtures'


def all_vectors(upper: typing.Sequence[int]) -> npt.NDArray:
    """ Every integral vector in [0, upper], in lexicographic order """
    if len(upper) == 0:
        return np.zeros((1, 0), dtype = np.int64)
    return np.array(list(itertools.product(*[range(int(u) + 1) for u in upper])), dtype = np.int64)


def brute_force_witness(
    A: npt.ArrayLike,
    target: typing.Sequence[int],
    budget: int,
    upper: typing.Optional[typing.Sequence[int]] = None
) -> typing.Optional[npt.NDArray]:
    """ Lexicographically first y in {0..upper}^k with A y = target and ||y||_0 <= budget """
    A = np.asarray(A, dtype = np.int64)
    k = A.shape[1]
    Y = all_vectors((1,) * k if upper is None else upper)
    ok = (np.count_nonzero(Y, axis = 1) <= budget) & np.all(Y @ A.T == np.asarray(target, dtype = np.int64), axis = 1)
    hits = np.flatnonzero(ok)
    return Y[hits[0]] if hits.size else None


def brute_force_targets(
    A: npt.ArrayLike,
    budget: int,
    lo: typing.Sequence[int],
    hi: typing.Sequence[int],
    upper: typing.Optional[typing.Sequence[int]] = None
) -> typing.Dict[typing.Tuple[int, ...], int]:
    """ Reachable targets inside [lo, hi] with the fewest nonzeros reaching each """
    A = np.asarray(A, dtype = np.int64)
    Y = all_vectors((1,) * A.shape[1] if upper is None else upper)
    counts = np.count_nonzero(Y, axis = 1)
    sums = Y @ A.T
    out: typing.Dict[typing.Tuple[int, ...], int] = {}
    for s, c in zip(sums, counts):
        if c > budget or np.any(s < lo) or np.any(s > hi):
            continue
        key = tuple(int(v) for v in s)
        out[key] = min(out.get(key, c), int(c))
    return out


def projected_gradient(
    A: npt.ArrayLike,
    rhs: npt.ArrayLike,
    bounds: npt.ArrayLike,
    iters: int = 20_000
) -> npt.NDArray:
    """ Accelerated projected gradient on 1/2 ||A g - rhs||^2 over [0, bounds] """
    A = np.asarray(A, dtype = float)
    rhs = np.asarray(rhs, dtype = float)
    bounds = np.asarray(bounds, dtype = float)
    L = max(float(np.linalg.norm(A, 2)) ** 2, 1e-12)
    g = np.zeros(A.shape[1])
    y = g.copy()
    t = 1.0
    for _ in range(iters):
        g_next = np.clip(y - (A.T @ (A @ y - rhs)) / L, 0.0, bounds)
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = g_next + ((t - 1.0) / t_next) * (g_next - g)
        g, t = g_next, t_next
    return g


def random_instance(
    seed: int,
    m: int,
    n: int,
    amax: int,
    sigma: int,
    u: typing.Optional[int] = None
) -> ProblemInstance:
    """ Integer A in [-amax, amax] with a real target somewhere around its image """
    rng = make_rng(seed)
    A = rng.integers(-amax, amax + 1, size = (m, n))
    scale = max(1, amax) * sigma * (1 if u is None else u)
    b = rng.uniform(-scale, scale, size = m)
    return ProblemInstance.create(A, b, sigma, None if u is None else np.full(n, u))


@pytest.fixture
def p1() -> ProblemInstance:
    return ProblemInstance.create([[2, 3, 5]], [8], 2)


@pytest.fixture
def p1_path() -> Path:
    return FIXTURES / 'p1.json'


@pytest.fixture
def worst_case() -> ProblemInstance:
    return ProblemInstance.create(np.eye(4, dtype = np.int64), np.ones(4), 2, np.full(4, 2))
