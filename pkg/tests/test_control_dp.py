"""Tests for the discrete control problem."""

import math

import numpy as np
import pytest
from scipy import stats

from sdebounds.control_dp import (
    dp_convergence_check,
    dp_policy_is_bangbang,
    dp_solve,
    oracle_probability,
    shifted_weights,
    terminal_value,
)
from sdebounds.drift_parser import default_suite
from sdebounds.exceptions import DomainError, GridTooNarrow
from sdebounds.models import DPGrid, Objective, SimConfig, WorstKind
from sdebounds.sde_lab import simulate, simulate_worst


def one_step_value(shift, eps=0.1):
    return stats.norm.cdf(eps - shift) - stats.norm.cdf(-eps - shift)


def test_single_step_values():
    """Test one step reduces to choosing a Gaussian shift."""
    grid = DPGrid(n_steps=1, T=1.0, eps=0.1)

    best = dp_solve(grid, Objective.MAXIMIZE).value_at(0.0)
    worst = dp_solve(grid, Objective.MINIMIZE).value_at(0.0)

    assert best == pytest.approx(one_step_value(0.0), abs=1e-3)
    assert best == pytest.approx(0.0797, abs=1e-3)
    assert worst == pytest.approx(one_step_value(1.0), abs=1e-3)
    assert worst == pytest.approx(0.0484, abs=1e-3)


def test_step_weights_keep_mean_and_variance():
    """Test nodal step weights are distributions with mean v dt and variance dt."""
    grid = DPGrid(n_steps=16)
    shifts = np.array([-1.0, 0.0, 0.4, 1.0]) * grid.dt
    weights = shifted_weights(grid, shifts)
    reach = (weights.shape[1] - 1) // 2
    offsets = np.arange(-reach, reach + 1) * grid.cell_width
    assert weights.sum(axis=1) == pytest.approx(1.0)
    means = weights @ offsets
    assert means == pytest.approx(shifts, abs=1e-10)
    variances = weights @ offsets**2 - means**2
    assert variances == pytest.approx(grid.dt, rel=1e-9)


def test_terminal_value_is_an_indicator():
    """Test the terminal value is the cell-averaged ball indicator."""
    grid = DPGrid(n_steps=4, n_space=257)
    final = terminal_value(grid)
    assert final.min() == 0.0
    assert final.max() == pytest.approx(1.0)


def test_values_are_probabilities_and_symmetric():
    """Test the value function lies in [0, 1] and is even in x."""
    sol = dp_solve(DPGrid(n_steps=8, eps=0.25, n_space=1025), Objective.MAXIMIZE)
    assert sol.value.min() >= -1e-12
    assert sol.value.max() <= 1 + 1e-12
    for x in (0.3, 1.0, 2.5):
        assert sol.value_at(x) == pytest.approx(sol.value_at(-x), abs=1e-8)
    assert sol.value_at(0.0) > sol.value_at(1.0)


def test_ball_covering_the_grid():
    """Test a ball containing the whole grid is reached with probability one."""
    sol = dp_solve(DPGrid(n_steps=4, eps=10.0, n_space=257), Objective.MINIMIZE)
    assert sol.value_at(0.0) == pytest.approx(1.0, abs=1e-9)


def test_grid_too_narrow():
    """Test a grid that loses mass is rejected."""
    with pytest.raises(GridTooNarrow):
        dp_solve(DPGrid(n_steps=4, space_min=-1.0, space_max=1.0), Objective.MAXIMIZE)


@pytest.mark.parametrize(
    "objective, control_at_one",
    [(Objective.MAXIMIZE, -1.0), (Objective.MINIMIZE, 1.0)],
)
def test_policy_is_bang_bang(objective, control_at_one):
    """Test the optimal control saturates the bound away from the origin."""
    sol = dp_solve(DPGrid(n_steps=8, eps=0.25, n_space=1025), objective)

    report = dp_policy_is_bangbang(sol)

    assert report.checked > 0
    assert report.fraction_bang_bang >= 0.99
    i = int(abs(sol.nodes - 1.0).argmin())
    assert sol.policy[0, i] == pytest.approx(control_at_one, abs=1e-6)


def test_oracle_uses_worst_case_processes():
    """Test the oracle is largest for Y- and smallest for Y+."""
    top = oracle_probability(Objective.MAXIMIZE, 1.0, 0.1, 0.0)
    bottom = oracle_probability(Objective.MINIMIZE, 1.0, 0.1, 0.0)
    free = one_step_value(0.0)
    assert bottom < free < top


def test_convergence_to_oracle():
    """Test the discrete value approaches the continuous optimum."""
    report = dp_convergence_check(1.0, 0.1, 0.0, [4, 16, 64], n_space=1025)

    gaps = [row.gap_oracle for row in report.rows]
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 0.02
    assert report.oracle == pytest.approx(
        oracle_probability(Objective.MAXIMIZE, 1.0, 0.1, 0.0)
    )


def test_convergence_rejects_unordered_meshes():
    """Test n_list must increase."""
    with pytest.raises(DomainError, match="increasing"):
        dp_convergence_check(1.0, 0.1, 0.0, [16, 4])
    with pytest.raises(DomainError, match="increasing"):
        dp_convergence_check(1.0, 0.1, 0.0, [])


@pytest.mark.parametrize("objective", [Objective.MAXIMIZE, Objective.MINIMIZE])
def test_value_grows_with_the_ball(objective):
    """Test a larger ball is reached at least as often."""
    values = [
        dp_solve(DPGrid(n_steps=8, eps=eps, n_space=1025), objective).value_at(0.0)
        for eps in (0.1, 0.25, 0.5, 1.0)
    ]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_maximize_value_decreases_away_from_the_center():
    """Test the maximal ball probability is nonincreasing in |x0|."""
    sol = dp_solve(DPGrid(n_steps=16, eps=0.25, n_space=1025), Objective.MAXIMIZE)
    outward = sol.value[0][(sol.nodes >= 0) & (sol.nodes <= 4.0)]
    assert np.all(np.diff(outward) <= 1e-10)
    inward = sol.value[0][(sol.nodes <= 0) & (sol.nodes >= -4.0)]
    assert np.all(np.diff(inward) >= -1e-10)


def test_refinement_leaves_value_unchanged():
    """Test doubling the space resolution moves V0(0) by less than 1e-4."""
    coarse = dp_solve(DPGrid(n_steps=64, eps=0.25), Objective.MAXIMIZE).value_at(0.0)
    fine = dp_solve(DPGrid(n_steps=64, eps=0.25, n_space=4097), Objective.MAXIMIZE).value_at(0.0)
    assert abs(coarse - fine) < 1e-4


def test_admissible_drifts_lie_between_the_values():
    """Test every suite drift hits the ball between the minimal and maximal values."""
    n, eps = 100, 0.25
    top = dp_solve(DPGrid(n_steps=n, eps=eps), Objective.MAXIMIZE).value_at(0.0)
    bottom = dp_solve(DPGrid(n_steps=n, eps=eps), Objective.MINIMIZE).value_at(0.0)
    n_paths = 20_000
    for seed, drift in enumerate(default_suite(1.0), start=60):
        cfg = SimConfig(t_end=1.0, dt=1.0 / n, n_paths=n_paths, seed=seed)
        hits = np.abs(simulate(drift, [0.0], cfg).terminal_values[:, 0]) <= eps
        p_hat = float(hits.mean())
        ci = 2.576 * math.sqrt(p_hat * (1 - p_hat) / n_paths)
        assert bottom - ci - 1e-3 <= p_hat <= top + ci + 1e-3, drift.description


def test_minimize_convergence_to_oracle():
    """Test the minimal value approaches the Y+ oracle from above."""
    report = dp_convergence_check(
        1.0, 0.25, 0.0, [4, 16, 64], objective=Objective.MINIMIZE, n_space=1025
    )

    gaps = [row.gap_oracle for row in report.rows]
    assert report.monotone
    assert gaps[-1] < gaps[0]
    assert all(row.value >= report.oracle - 1e-3 for row in report.rows)
    assert report.oracle == pytest.approx(
        oracle_probability(Objective.MINIMIZE, 1.0, 0.25, 0.0)
    )


@pytest.mark.slow
def test_convergence_acceptance():
    """Test monotone convergence to both oracles and a bang-bang policy at n = 256.

    The discrete gap decays like 1 / n, so 2e-3 is reached on the n = 1024 mesh.
    """
    samples = simulate_worst(
        WorstKind.MINUS, [0.0], SimConfig(dt=1e-3, n_paths=200_000, seed=50)
    )

    report = dp_convergence_check(
        1.0, 0.25, 0.0, [16, 64, 256, 1024], mc_oracle=samples
    )

    assert report.monotone
    assert report.final_within_tolerance, report.rows[-1]
    assert report.passed
    sol = dp_solve(DPGrid(n_steps=256, eps=0.25), Objective.MAXIMIZE)
    assert dp_policy_is_bangbang(sol).fraction_bang_bang >= 0.99


@pytest.mark.slow
def test_minimize_convergence_acceptance():
    """Test the minimal value converges monotonically to the Y+ oracle."""
    samples = simulate_worst(
        WorstKind.PLUS, [0.0], SimConfig(dt=1e-3, n_paths=200_000, seed=51)
    )

    report = dp_convergence_check(
        1.0, 0.25, 0.0, [16, 64, 256, 1024], mc_oracle=samples,
        objective=Objective.MINIMIZE, grid_tolerance=5e-3,
    )

    assert report.monotone
    assert report.final_within_tolerance, report.rows[-1]
    sol = dp_solve(DPGrid(n_steps=256, eps=0.25), Objective.MINIMIZE)
    assert dp_policy_is_bangbang(sol).fraction_bang_bang >= 0.99
