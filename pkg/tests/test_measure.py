import math

import numpy as np
import pytest
from scipy.stats import norm

from conftest import small_bundle, within
from fbsdep.control import ControlProcess
from fbsdep.forward import simulate_forward
from fbsdep.measure import (density_summary, girsanov_density, observation_process,
                            reweighted_expectation, weak_novikov_estimate)
from fbsdep.model import MarkSpace, ModelSpec, TimeGrid
from fbsdep.noise import NoiseBundle
from fbsdep.presets import get_preset

U0 = ControlProcess.constant(0.0)


def const_h(c, beta):
    return ModelSpec(observation_h=lambda x, u: c + 0.0 * x, beta=beta, h_bound=abs(c))


def quiet_bundle(n_paths=3, horizon=2.0, n_steps=200):
    grid = TimeGrid(horizon, n_steps)
    z = np.zeros((n_paths, n_steps))
    return NoiseBundle(z, z.copy(), np.zeros((n_paths, n_steps, 0)), 0, grid, MarkSpace())


def test_h_zero_xi_is_brownian_and_density_one():
    spec = ModelSpec()
    b = small_bundle(spec)
    for measure in ("P_bar", "P_transformed"):
        fwd = simulate_forward(spec, U0, b, measure)
        xi = observation_process(fwd, U0, spec, b)
        np.testing.assert_allclose(xi.xi[:, 1:], np.cumsum(b.dWt, axis=1), atol=1e-12)
        dens = girsanov_density(fwd, U0, spec, xi)
        assert np.all(dens.Z == 1.0)
    rep = weak_novikov_estimate(fwd, U0, spec)
    assert rep.estimate == 1.0


def test_xi_deterministic_quadrature():
    beta, T = 1.0, 2.0
    spec = const_h(1.0, beta)
    b = quiet_bundle()
    fwd = simulate_forward(spec, U0, b, "P_bar")
    xi = observation_process(fwd, U0, spec, b)
    target = 2 * (1 - math.exp(-beta * T / 2)) / beta
    assert xi.xi[0, -1] == pytest.approx(target, rel=1e-2)
    np.testing.assert_allclose(xi.xi, fwd.xi, atol=1e-14)


def test_beta_zero_constant_drift_recovered():
    c = 0.7
    spec = const_h(c, 0.0)
    b = small_bundle(spec, n_paths=4000)
    fwd = simulate_forward(spec, U0, b, "P_bar")
    xT = observation_process(fwd, U0, spec, b).xi[:, -1]
    assert within(xT.mean(), c * 2.0, xT.std(ddof=1) / math.sqrt(xT.size))


def test_log_density_closed_form():
    c, T = 0.8, 2.0
    spec = const_h(c, 0.0)
    b = small_bundle(spec, n_paths=20)
    fwd = simulate_forward(spec, U0, b, "P_transformed")
    xi = observation_process(fwd, U0, spec, b)
    dens = girsanov_density(fwd, U0, spec, xi)
    np.testing.assert_allclose(dens.log_Z[:, -1], c * xi.xi[:, -1] - c * c * T / 2, atol=1e-12)
    assert np.all(dens.Z > 0) and np.all(dens.Z[:, 0] == 1)


def test_density_martingale_on_bounded_h():
    pre = get_preset("bounded-h-girsanov")
    b = small_bundle(pre.spec, horizon=4.0, n_steps=200, n_paths=4000, seed=3)
    ctrl = ControlProcess.constant(0.3)
    fwd = simulate_forward(pre.spec, ctrl, b)
    dens = girsanov_density(fwd, ctrl, pre.spec, observation_process(fwd, ctrl, pre.spec, b))
    for j in (50, 100, 150, 200):
        m, se = reweighted_expectation(np.ones(b.n_paths), dens, j, return_stderr=True)
        assert within(m, 1.0, se)
    rows = density_summary(dens, b.grid.times, [0, 200])
    assert rows[0]["mean_Z"] == 1.0 and set(rows[1]) == {"t", "mean_Z", "stderr", "min_Z", "max_logZ"}


def test_euler_discrepancy_shrinks_with_dt():
    pre = get_preset("bounded-h-girsanov")
    ctrl = ControlProcess.constant(0.3)
    gaps = []
    for steps in (50, 100, 200):
        b = small_bundle(pre.spec, horizon=2.0, n_steps=steps, n_paths=1000, seed=5)
        fwd = simulate_forward(pre.spec, ctrl, b)
        gaps.append(girsanov_density(fwd, ctrl, pre.spec,
                                     observation_process(fwd, ctrl, pre.spec, b)).sde_discrepancy)
    assert gaps[0] > gaps[1] > gaps[2]


def test_novikov_constant_h_exact_and_divergent():
    c = 0.6
    spec = const_h(c, 1.0)
    b = small_bundle(spec, horizon=10.0, n_steps=200, n_paths=100)
    fwd = simulate_forward(spec, U0, b)
    rep = weak_novikov_estimate(fwd, U0, spec)
    assert rep.estimate == pytest.approx(math.exp(c * c / 2), rel=1e-10)
    assert rep.finite and rep.estimate <= rep.deterministic_bound * (1 + 1e-12)
    spec0 = const_h(c, 0.0)
    rep0 = weak_novikov_estimate(simulate_forward(spec0, U0, b), U0, spec0)
    assert not rep0.finite
    assert rep0.estimate == pytest.approx(math.exp(c * c * 10.0 / 2), rel=1e-10)


def test_reweighting_gaussian_tilt():
    c, a, T = 0.5, 0.3, 2.0
    spec = const_h(c, 0.0)
    b = small_bundle(spec, n_paths=20000, seed=9)
    fwd = simulate_forward(spec, U0, b)
    xi = observation_process(fwd, U0, spec, b)
    dens = girsanov_density(fwd, U0, spec, xi)
    m, se = reweighted_expectation((xi.xi[:, -1] > a).astype(float), dens, return_stderr=True)
    assert within(m, norm.sf((a - c * T) / math.sqrt(T)), se)


def test_reweighting_h_zero_is_plain_mean():
    spec = ModelSpec()
    b = small_bundle(spec, n_paths=50)
    fwd = simulate_forward(spec, U0, b)
    dens = girsanov_density(fwd, U0, spec, observation_process(fwd, U0, spec, b))
    vals = np.arange(50.0)
    assert reweighted_expectation(vals, dens) == pytest.approx(vals.mean())
