import math

from dataclasses import replace

import numpy as np
import pytest

from ezmsg.sparsecube.core import ProblemInstance, PreconditionError, make_rng
from ezmsg.sparsecube.relaxation import reduce_to_few_fractionals, solve_relaxation
from ezmsg.sparsecube.solver import solve_exact
from ezmsg.sparsecube.experiments import (
    InteriorConfig,
    SamplingConfig,
    check_far_target_probability,
    check_interior_exactness,
    distance_to_image,
    far_target_bound,
    image_bounding_box,
    lambda_from_multiplier,
    loglog_slope,
    planted_instance,
    relaxation_is_integral,
    sample_from_Q_plus_ball,
    sample_shrunk_polytope,
    scaling_sweep,
    vertex_attains,
    wilson_interval,
    worst_case_instance,
)

from conftest import random_instance


def test_wilson_interval() -> None:
    low, high = wilson_interval(5, 10)
    assert low < 0.5 < high
    assert wilson_interval(10, 10)[1] == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        wilson_interval(0, 0)


@pytest.mark.parametrize('m', [1, 2, 3])
def test_doubled_lambda_gives_half(m: int) -> None:
    instance = random_instance(m, m, 6, 2, 3)
    lam = lambda_from_multiplier(instance, 2.0)
    assert far_target_bound(instance, lam) >= 0.5
    assert far_target_bound(instance, lam) == pytest.approx((2 * m / (2 * m + 1)) ** m)
    assert far_target_bound(instance, 0.0) == 0.0


def test_image_bounding_box() -> None:
    instance = ProblemInstance.create([[2, -3, 5, -1], [1, 1, 1, 1]], [0, 0], 2)
    lo, hi = image_bounding_box(instance)
    assert lo.tolist() == [-4.0, 0.0]
    assert hi.tolist() == [7.0, 2.0]


def test_distance_to_image() -> None:
    instance = ProblemInstance.create([[1]], [0], 1)
    dist, _ = distance_to_image(instance, [3.0], 1e-8)
    assert dist == pytest.approx(2.0, abs = 1e-6)
    inside, _ = distance_to_image(instance, [0.25], 1e-8)
    assert inside <= 1e-4


def test_distance_just_outside_the_image() -> None:
    instance = ProblemInstance.create(np.eye(2, dtype = np.int64), [0, 0], 1)
    b = np.array([0.5, 0.5]) + 1e-4 * np.ones(2) / math.sqrt(2.0)
    dist, _ = distance_to_image(instance, b, 1e-7)
    assert 1e-4 - 1e-7 <= dist <= 1e-4 + 1e-9


def test_line_samples_fill_the_grown_segment() -> None:
    # Q = [0, 1] and Q + B = [-1, 2], which is exactly the proposal box
    instance = ProblemInstance.create([[1]], [0], 1)
    rng = make_rng(3)
    samples = []
    for _ in range(200):
        b, proposals = sample_from_Q_plus_ball(instance, 1.0, rng)
        assert proposals == 1
        samples.append(float(b[0]))
    samples = np.array(samples)
    assert samples.min() >= -1.0 and samples.max() <= 2.0
    stderr = 3.0 / math.sqrt(12.0 * len(samples))
    assert abs(samples.mean() - 0.5) <= 3 * stderr


def test_zero_lambda_samples_from_the_image() -> None:
    instance = ProblemInstance.create(np.eye(2, dtype = np.int64), [0, 0], 1)
    rng = make_rng(5)
    for _ in range(10):
        b, _ = sample_from_Q_plus_ball(instance, 0.0, rng)
        assert b.min() >= 0.0
        assert b.sum() <= 1.0 + 1e-6
    with pytest.raises(PreconditionError):
        sample_from_Q_plus_ball(instance, -1.0, rng)


def test_shrunk_polytope_samples() -> None:
    instance = random_instance(0, 2, 5, 2, 3, u = 2)
    c = 2.0 / 3.0
    rng = make_rng(1)
    for _ in range(20):
        x, proposals = sample_shrunk_polytope(instance, rng)
        assert proposals >= 1
        assert np.all(x >= 0) and np.all(x <= c * 2.0)
        assert np.sum(x / 2.0) <= c * 3 + 1e-12


def test_worst_case_instance(worst_case: ProblemInstance) -> None:
    built = worst_case_instance(4)
    assert np.array_equal(built.A, worst_case.A)
    assert np.array_equal(built.b, worst_case.b)
    assert built.sigma_eff == 2
    assert built.upper.tolist() == [2.0] * 4
    with pytest.raises(PreconditionError):
        worst_case_instance(1)


@pytest.mark.parametrize('seed', range(4))
def test_planted_instances_fit_exactly(seed: int) -> None:
    rng = make_rng(seed)
    u = None if seed % 2 else np.full(6, 2)
    instance = planted_instance(2, 6, 2, 2, rng, u)
    assert solve_exact(instance).best.objective <= 1e-6


def test_interior_targets_are_exact() -> None:
    instance = random_instance(2, 2, 5, 2, 3)
    report = check_interior_exactness(InteriorConfig(instance, trials = 6, seed = 4))
    assert report.trials == 6
    assert report.frequency == 1.0
    assert report.rho == 1.0
    assert all(r.objective_exact <= 1e-6 for r in report.records)
    for r in report.records:
        assert r.objective_exact <= r.objective_rounded + 1e-9
        if r.integral_optimal:
            assert r.objective_exact <= r.objective_relax + 1e-6


def test_interior_needs_enough_sparsity() -> None:
    instance = random_instance(2, 3, 5, 2, 2)
    with pytest.raises(PreconditionError):
        check_interior_exactness(InteriorConfig(instance, trials = 1))


def test_far_report() -> None:
    instance = ProblemInstance.create([[1, -1, 2, 1]], [0], 1)
    lam = lambda_from_multiplier(instance, 2.0)
    report = check_far_target_probability(SamplingConfig(instance, lam = lam, trials = 5, seed = 2))
    assert report.trials == 5
    assert report.lam == lam
    assert report.rho == pytest.approx(far_target_bound(instance, lam))
    assert report.ci_low - 1e-12 <= report.frequency <= report.ci_high + 1e-12
    assert 0.0 < report.acceptance_rate <= 1.0
    for r in report.records:
        # the sparse optimum can never beat the relaxation
        assert r.objective_exact >= r.objective_relax - 1e-6
        assert r.objective_exact <= r.objective_rounded + 1e-9
        if r.integral_optimal:
            assert r.objective_exact <= r.objective_relax + 1e-6
        if r.exact:
            assert r.objective_exact <= 1e-6


def test_far_rejects_bad_settings() -> None:
    instance = ProblemInstance.create([[1]], [0], 1)
    with pytest.raises(PreconditionError):
        check_far_target_probability(SamplingConfig(instance, lam = -1.0))
    with pytest.raises(PreconditionError):
        check_far_target_probability(SamplingConfig(instance, trials = 0))


def test_trials_do_not_depend_on_threads() -> None:
    instance = random_instance(6, 1, 5, 2, 2)
    config = InteriorConfig(instance, trials = 4, seed = 9)
    serial = check_interior_exactness(config)
    parallel = check_interior_exactness(replace(config, threads = 2))
    assert serial.records == parallel.records


def test_vertex_attains(p1: ProblemInstance) -> None:
    assert vertex_attains(p1, [8.0], 0.0)
    assert vertex_attains(p1, [8.00001], 0.0)
    assert not vertex_attains(p1, [8.3], 0.0)
    # 4 is not a sum of at most two distinct entries of (2, 3, 5)
    assert not vertex_attains(p1, [4.0], 4.0)
    # reachable, but 5 scores 3 against b = 8
    assert not vertex_attains(p1, [5.0], 0.0)
    assert vertex_attains(p1, [5.0], 3.0)


def test_relaxation_is_integral(p1: ProblemInstance, worst_case: ProblemInstance) -> None:
    relaxed = solve_relaxation(p1, 1e-6)
    reduced = reduce_to_few_fractionals(p1, relaxed.x_bar, exact = True)
    assert relaxation_is_integral(p1, relaxed, reduced)

    relaxed = solve_relaxation(worst_case, 1e-6)
    reduced = reduce_to_few_fractionals(worst_case, relaxed.x_bar, exact = True)
    assert not relaxation_is_integral(worst_case, relaxed, reduced)


def test_loglog_slope() -> None:
    assert loglog_slope([1, 2, 4, 8], [3, 12, 48, 192]) == pytest.approx(2.0)
    assert loglog_slope([10, 100], [5, 5]) == pytest.approx(0.0, abs = 1e-12)


def test_scaling_sweep() -> None:
    points = scaling_sweep([5, 7], m = 1, amax = 2, sigma = 2, seed = 1)
    assert [p.n for p in points] == [5, 7]
    for p in points:
        assert p.dp_states > 0
        assert p.wall_time > 0
        assert p.greedy_objective >= p.objective - 1e-9
