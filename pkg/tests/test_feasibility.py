import itertools

import numpy as np
import pytest

from ezmsg.sparsecube.core import make_rng
from ezmsg.sparsecube.feasibility import (
    FeasibilityQuery,
    SuffixTable,
    SupportWalk,
    count_states,
    feasible_targets,
    solve_feasibility,
)

from conftest import brute_force_targets, brute_force_witness


def test_zero_target() -> None:
    y = solve_feasibility(FeasibilityQuery(np.array([[2, -1, 3], [1, 1, 1]]), (0, 0), 2))
    assert y.tolist() == [0, 0, 0]


def test_hand_examples() -> None:
    A = np.array([[2, 3, 5]])
    assert solve_feasibility(FeasibilityQuery(A, (8,), 2)).tolist() == [0, 1, 1]
    assert solve_feasibility(FeasibilityQuery(A, (8,), 1)) is None
    assert solve_feasibility(FeasibilityQuery(A, (8,), -1)) is None


def test_bounded_columns() -> None:
    A = np.array([[2, 3, 5]])
    # 4 = 2 * 2 needs the first column twice
    assert solve_feasibility(FeasibilityQuery(A, (4,), 1, (2, 1, 1))).tolist() == [2, 0, 0]
    assert solve_feasibility(FeasibilityQuery(A, (4,), 1)) is None


def test_count_states_examples() -> None:
    empty = np.zeros((1, 0), dtype = np.int64)
    assert count_states(FeasibilityQuery(empty, (0,), 1)) == 1
    assert count_states(FeasibilityQuery(empty, (3,), 1)) == 1
    assert solve_feasibility(FeasibilityQuery(empty, (3,), 1)) is None
    assert solve_feasibility(FeasibilityQuery(empty, (0,), 0)).tolist() == []
    assert count_states(FeasibilityQuery(np.array([[3]]), (3,), 1)) <= 4
    assert count_states(FeasibilityQuery(np.array([[3]]), (3,), -1)) == 0


def random_query(seed: int, max_n: int = 10):
    rng = make_rng(seed)
    m = int(rng.integers(1, 4))
    n = int(rng.integers(1, max_n + 1))
    amax = int(rng.integers(1, 4))
    A = rng.integers(-amax, amax + 1, size = (m, n))
    budget = int(rng.integers(0, n + 1))
    if rng.uniform() < 0.5:
        # reachable by construction
        y = (rng.uniform(size = n) < 0.4).astype(np.int64)
        target = tuple(int(v) for v in A @ y)
    else:
        target = tuple(int(v) for v in rng.integers(-amax * 2, amax * 2 + 1, size = m))
    return A, target, budget


@pytest.mark.parametrize('seed', range(60))
def test_agrees_with_brute_force(seed: int) -> None:
    A, target, budget = random_query(seed)
    expected = brute_force_witness(A, target, budget)
    y = solve_feasibility(FeasibilityQuery(A, target, budget))
    if expected is None:
        assert y is None
    else:
        assert y is not None
        assert tuple(int(v) for v in A @ y) == target
        assert np.count_nonzero(y) <= budget
        assert y.tolist() == expected.tolist()


@pytest.mark.parametrize('seed', range(10))
def test_bounded_agrees_with_brute_force(seed: int) -> None:
    rng = make_rng(seed, 3)
    A = rng.integers(-2, 3, size = (2, 5))
    upper = tuple(int(v) for v in rng.integers(1, 4, size = 5))
    for target in itertools.product(range(-3, 4), repeat = 2):
        for budget in (1, 3):
            expected = brute_force_witness(A, target, budget, upper)
            y = solve_feasibility(FeasibilityQuery(A, target, budget, upper))
            assert (y is None) == (expected is None)
            if y is not None:
                assert y.tolist() == expected.tolist()


@pytest.mark.parametrize('seed', range(10))
def test_box_targets(seed: int) -> None:
    rng = make_rng(seed, 5)
    A = rng.integers(-3, 4, size = (2, 7))
    lo, hi = (-4, -2), (3, 5)
    table = feasible_targets(A, 3, lo, hi)
    expected = brute_force_targets(A, 3, lo, hi)
    assert table.targets() == sorted(expected)
    assert {t: table.layers[0][t] for t in table.targets()} == expected
    for t in table.targets():
        assert table.witness(t).tolist() == brute_force_witness(A, t, 3).tolist()
    assert table.witness((100, 100)) is None


def test_states_listing() -> None:
    table = SuffixTable(np.array([[1, 2]]), 2, (0,), (3,))
    states = list(table.states())
    assert len(states) == table.n_states
    assert {s.partial for s in states if s.column == 0} == {(0,), (1,), (2,), (3,)}


@pytest.mark.parametrize('seed', range(8))
def test_support_walk_matches_per_guess_tables(seed: int) -> None:
    rng = make_rng(seed, 11)
    m = 1 + seed % 2
    n = 6
    sigma = 3
    A = rng.integers(-2, 3, size = (m, n))
    upper = None if seed % 3 else tuple(int(v) for v in rng.integers(1, 3, size = n))
    lo, hi = (-3,) * m, (4,) * m

    walk = SupportWalk(A, sigma, lo, hi, upper, max_size = m)
    seen = []
    for guess in walk.guesses():
        seen.append(guess.F)
        rest = [i for i in range(n) if i not in guess.F]
        rest_upper = None if upper is None else tuple(upper[i] for i in rest)
        expected = brute_force_targets(A[:, rest], sigma - len(guess.F), lo, hi, rest_upper)
        got = {tuple(int(v) for v in t): int(c) for t, c in zip(guess.targets, guess.counts)}
        assert got == expected
        assert [tuple(int(v) for v in t) for t in guess.targets] == sorted(expected)

    combos = [F for k in range(m + 1) for F in itertools.combinations(range(n), k)]
    assert sorted(seen) == sorted(combos)
    assert seen == sorted(seen)
    assert walk.n_states >= walk.suffix.n_states


def test_support_walk_chunks_cover_the_walk() -> None:
    A = make_rng(4).integers(-2, 3, size = (2, 7))
    walk = SupportWalk(A, 3, (-3, -3), (3, 3), max_size = 2)
    full = [g.F for g in walk.guesses()]
    chunked = []
    for start in range(0, 7, 3):
        chunked += [g.F for g in SupportWalk(A, 3, (-3, -3), (3, 3), max_size = 2).guesses(start, start + 3)]
    assert chunked == full


def test_support_walk_sizes_and_limit() -> None:
    A = np.array([[1, 2, 3, 4]])
    walk = SupportWalk(A, 2, (0,), (6,))
    assert [g.F for g in walk.guesses(sizes = [2])] == list(itertools.combinations(range(4), 2))
    assert len(list(walk.guesses(limit = 3))) == 3
    assert [g.F for g in walk.guesses(sizes = [0])] == [()]
