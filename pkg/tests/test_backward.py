import math

import numpy as np
import pytest

from fbsdep.backward import (RegressionBasis, backward_stability, backward_sweep, compare_schemes,
                             design_matrix, estimate_for_N_check, regress, residual_on_window,
                             solve_bsdep_conditional_terminal, solve_bsdep_zero_terminal,
                             stability_prefactor, truncation_gap)
from fbsdep.control import ControlProcess
from fbsdep.errors import InvalidDelta, NonConvergent, SingularRegression
from fbsdep.forward import simulate_forward
from fbsdep.model import ModelSpec, TimeGrid
from fbsdep.noise import sample_noise
from fbsdep.presets import get_preset

ZERO_U = ControlProcess.constant(0.0)


@pytest.fixture(scope="module")
def linear_setup():
    spec = get_preset("linear-bsde").spec
    b = sample_noise(TimeGrid(4.0, 400), spec.marks, 1000, 2)
    return spec, b, simulate_forward(spec, ZERO_U, b)


def test_basis_validation():
    with pytest.raises(ValueError):
        RegressionBasis(kind="spline")
    with pytest.raises(ValueError):
        RegressionBasis(features=("y",))


def test_design_drops_constant_columns():
    feats = np.column_stack([np.ones(50), np.linspace(0, 1, 50)])
    d = design_matrix(RegressionBasis(degree=2), feats)
    assert d.shape == (50, 3)
    assert design_matrix(RegressionBasis(), np.ones((10, 1))).shape == (10, 1)
    bins = design_matrix(RegressionBasis(kind="piecewise_constant_bins", bins=4),
                         np.linspace(0, 1, 40)[:, None])
    np.testing.assert_allclose(bins.sum(axis=1), 1.0)


def test_regress_reproduces_polynomial():
    x = np.linspace(-1, 1, 200)
    d = design_matrix(RegressionBasis(degree=3), x[:, None])
    np.testing.assert_allclose(regress(d, 1 + x - x ** 3, 0.0), 1 + x - x ** 3, atol=1e-9)


def test_singular_regression_raises():
    d = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(SingularRegression):
        regress(d, np.zeros(10), 0.0)


def test_picard_divergence_raises():
    feats = np.zeros((5, 3, 1))
    with pytest.raises(NonConvergent):
        backward_sweep(feats, RegressionBasis(), 0.1, 2, np.ones(5), lambda j, y, z, g: -1000.0 * y, {})


@pytest.mark.parametrize("n", [1.0, 2.0, 4.0])
def test_linear_bsde_matches_ode(linear_setup, n):
    spec, b, fwd = linear_setup
    sol = solve_bsdep_zero_terminal(spec, fwd, b, n)
    target = (1 - math.exp(-2 * n)) / 2
    assert abs(sol.y0 - target) <= max(0.01 * target, 3 * sol.y0_stderr)
    assert np.all(sol.y[:, sol.n_idx:] == 0)


def test_zero_generator_zero_solution():
    spec = ModelSpec(x0=0.3)
    b = sample_noise(TimeGrid(1.0, 20), spec.marks, 50, 1)
    sol = solve_bsdep_zero_terminal(spec, simulate_forward(spec, ZERO_U, b), b, 1.0)
    assert np.all(sol.y == 0) and np.all(sol.z == 0)


def test_state_dependent_source_oracle():
    kappa = 2.0
    spec = get_preset("ou-forward").spec.with_(
        generator_g=lambda x, y, z, zt, g, u, t: -kappa * y + x, mu2=-kappa)
    b = sample_noise(TimeGrid(3.0, 300), spec.marks, 2000, 4)
    sol = solve_bsdep_zero_terminal(spec, simulate_forward(spec, ZERO_U, b), b, 3.0)
    target = (1 - math.exp(-(kappa + 1) * 3.0)) / (kappa + 1)
    assert abs(sol.y0 - target) <= max(0.01 * target, 3 * sol.y0_stderr)
    # z ≈ σ ∂y/∂x = 0.5/(κ+1) away from the horizon
    assert float(np.mean(sol.z[:, 10:100])) == pytest.approx(0.5 / (kappa + 1), rel=0.05)


def test_zeta_zero_schemes_identical(linear_setup):
    spec, b, fwd = linear_setup
    gap = compare_schemes(spec, fwd, b, 2.0, lambda f, j: np.zeros(f.n_paths))
    assert gap.value == 0.0


def test_conditional_terminal_tail_is_zeta(linear_setup):
    spec, b, fwd = linear_setup
    sol = solve_bsdep_conditional_terminal(spec, fwd, b, 2.0, lambda f, j: f.x[:, j])
    np.testing.assert_array_equal(sol.y[:, -1], fwd.x[:, 200])
    with pytest.raises(ValueError):
        solve_bsdep_conditional_terminal(spec, fwd, b, 2.0, lambda f, j: np.full(f.n_paths, np.nan))


def test_truncation_gap_shrinks(linear_setup):
    spec, b, fwd = linear_setup
    sols = [solve_bsdep_zero_terminal(spec, fwd, b, n) for n in (1.0, 2.0, 4.0)]
    g1 = truncation_gap(sols[0], sols[1], 1.0).total
    g2 = truncation_gap(sols[1], sols[2], 1.0).total
    assert g2 < g1
    with pytest.raises(ValueError):
        truncation_gap(sols[0], solve_bsdep_conditional_terminal(spec, fwd, b, 1.0, lambda f, j: f.x[:, j]), 1.0)


def test_horizon_beyond_grid_rejected(linear_setup):
    spec, b, fwd = linear_setup
    with pytest.raises(ValueError):
        solve_bsdep_zero_terminal(spec, fwd, b, 10.0)


def test_residual_small_and_stability_errors(linear_setup):
    spec, b, fwd = linear_setup
    sol = solve_bsdep_zero_terminal(spec, fwd, b, 4.0)
    r, se = residual_on_window(sol, spec, fwd, b, 2.0, return_stderr=True)
    assert r < 0.05
    assert residual_on_window(sol, spec, fwd, b, 0.0) == 0.0
    assert stability_prefactor(spec, 1.0) == pytest.approx(-1 + 4 - 1)
    with pytest.raises(InvalidDelta):
        backward_stability(spec, spec, fwd, b, 5.0)
    with pytest.raises(InvalidDelta):
        backward_stability(spec, spec, fwd, b, 0.0)


def test_stability_identical_generators_zero(linear_setup):
    spec, b, fwd = linear_setup
    rep = backward_stability(spec, spec, fwd, b, 1.0, n=2.0)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.holds


def test_estimate_for_N_zero_gamma():
    spec = get_preset("jump-linear").spec
    b = sample_noise(TimeGrid(1.0, 20), spec.marks, 50, 1)
    rep = estimate_for_N_check(np.zeros((50, 20, 1)), b, 1.0)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.holds
