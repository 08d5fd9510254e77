import numpy as np
import pytest

from ezmsg.sparsecube.core import ProblemInstance, PreconditionError, make_rng, objective
from ezmsg.sparsecube.extension import (
    HARD_CAP,
    ActiveSetGuess,
    BoxLeastSquares,
    active_set_guesses,
    box_least_squares,
    extend,
)

from conftest import projected_gradient


def kkt_residual(A: np.ndarray, rhs: np.ndarray, bounds: np.ndarray, g: np.ndarray) -> float:
    """ Largest violation of the box-constrained optimality conditions at g """
    grad = A.T @ (A @ g - rhs)
    worst = 0.0
    for gi, di, ui in zip(g, grad, bounds):
        if gi <= 1e-9:
            worst = max(worst, -di)
        elif gi >= ui - 1e-9:
            worst = max(worst, di)
        else:
            worst = max(worst, abs(di))
    return worst


def test_guesses() -> None:
    guesses = list(active_set_guesses(2))
    assert len(guesses) == 9
    assert guesses[0] == ActiveSetGuess((0, 1), (), ())
    assert guesses[-1] == ActiveSetGuess((), (0, 1), ())
    assert list(active_set_guesses(0)) == [ActiveSetGuess((), (), ())]


def test_interior_solution() -> None:
    A = np.array([[1, 0], [0, 2], [1, 1]])
    g_true = np.array([0.3, 0.6])
    assert np.allclose(box_least_squares(A, A @ g_true), g_true)


def test_clamped_examples() -> None:
    assert np.allclose(box_least_squares([[1], [1]], [2, 2], [1]), [1.0])
    assert np.allclose(box_least_squares([[1]], [-3]), [0.0])
    assert np.allclose(box_least_squares([[0, 0]], [5]), [0.0, 0.0])
    assert np.allclose(box_least_squares([[1]], [5], [3]), [3.0])


def test_hard_cap() -> None:
    with pytest.raises(PreconditionError):
        BoxLeastSquares(np.ones((1, HARD_CAP + 1)))


def test_solve_many_matches_single() -> None:
    rng = make_rng(2)
    A = rng.integers(-2, 3, size = (2, 3))
    plan = BoxLeastSquares(A)
    R = rng.uniform(-4, 4, size = (6, 2))
    G, obj = plan.solve_many(R)
    for rhs, g, o in zip(R, G, obj):
        assert np.allclose(plan.solve(rhs), g)
        assert o == pytest.approx(np.linalg.norm(rhs - A @ g))


@pytest.mark.parametrize('seed', range(30))
def test_optimality(seed: int) -> None:
    rng = make_rng(seed)
    m = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    A = rng.integers(-3, 4, size = (m, k)).astype(float)
    bounds = rng.integers(1, 3, size = k).astype(float)
    rhs = rng.uniform(-5, 5, size = m)

    g = box_least_squares(A, rhs, bounds)
    assert np.all(g >= 0) and np.all(g <= bounds)
    assert kkt_residual(A, rhs, bounds, g) <= 1e-6 * max(1.0, float(np.abs(A).sum() * np.abs(rhs).sum()))

    f = np.sum((A @ g - rhs) ** 2)
    f_ref = np.sum((A @ projected_gradient(A, rhs, bounds) - rhs) ** 2)
    assert f <= f_ref + 1e-9
    assert f_ref - f <= 1e-5


def test_extend_empty_F(p1: ProblemInstance) -> None:
    sol = extend(p1, [0, 1, 0], [])
    assert sol.x.tolist() == [0.0, 1.0, 0.0]
    assert sol.objective == objective(p1, [0, 1, 0]) == 5.0


def test_extend_examples() -> None:
    small = ProblemInstance.create([[1]], [0.4], 1)
    sol = extend(small, [0], [0])
    assert np.allclose(sol.x, [0.4])
    assert sol.objective == pytest.approx(0.0, abs = 1e-12)

    far = ProblemInstance.create([[1]], [3], 1)
    sol = extend(far, [0], [0])
    assert sol.x.tolist() == [1.0]
    assert sol.objective == pytest.approx(2.0)


def test_extend_with_bounds() -> None:
    instance = ProblemInstance.create([[1, 1]], [4.5], 2, [2, 3])
    sol = extend(instance, [2, 0], [1])
    assert np.allclose(sol.x, [2.0, 2.5])
    assert sol.objective == pytest.approx(0.0, abs = 1e-12)


def test_extend_preconditions(p1: ProblemInstance) -> None:
    with pytest.raises(PreconditionError):
        extend(p1, [0.5, 0, 0], [1])
    with pytest.raises(PreconditionError):
        extend(p1, [0, 1, 0], [1])
    with pytest.raises(PreconditionError):
        extend(p1, [1, 1, 0], [2])
    with pytest.raises(PreconditionError):
        extend(p1, [0, 0], [1])
    with pytest.raises(PreconditionError):
        extend(p1, [2, 0, 0], [])
