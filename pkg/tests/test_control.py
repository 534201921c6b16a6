import math

import numpy as np
import pytest

from conftest import small_bundle, within
from fbsdep.control import (ControlProcess, admissibility_check, control_values, cost_samples,
                            difference_quotient, discounted_cost, perturbation_convergence,
                            simulate_variational, solve_trajectory, variational_inequality_lhs,
                            weighted_l2)
from fbsdep.errors import NonFiniteCost
from fbsdep.forward import simulate_forward
from fbsdep.model import ModelSpec
from fbsdep.presets import get_preset

LQ = get_preset("lq-scalar").spec
ONE = ControlProcess.constant(1.0)
ZERO = ControlProcess.constant(0.0)


@pytest.fixture(scope="module")
def lq_small():
    b = small_bundle(LQ, horizon=8.0, n_steps=320, n_paths=1500, seed=21)
    return b, solve_trajectory(LQ, ControlProcess.constant(0.5), b)


def test_partial_observation_hides_state():
    seen = []
    c = ControlProcess.observation_feedback(lambda t, f: seen.append(f) or 0.1 * f["xi"])
    c.evaluate(0.0, np.ones(3), {"xi": np.zeros(3), "xi_mean": np.zeros(3)})
    assert set(seen[0]) == {"xi", "xi_mean"}
    probe = ControlProcess("parametrized", lambda t, x, f: 0.0 if x is None else np.nan)
    assert probe.evaluate(0.0, np.ones(2), {"xi": np.zeros(2)}).tolist() == [0.0, 0.0]
    full = ControlProcess.feedback(lambda t, x: -x)
    assert full.evaluate(0.0, np.ones(2), {"xi": np.zeros(2)}).tolist() == [-1.0, -1.0]


def test_control_values_replay(lq_small):
    b, tr = lq_small
    np.testing.assert_array_equal(control_values(tr.control, tr.fwd), tr.fwd.u)


def test_zero_cost_and_unit_running_cost():
    spec = ModelSpec(beta=0.5)
    b = small_bundle(spec, horizon=6.0, n_steps=60, n_paths=100)
    tr = solve_trajectory(spec, ZERO, b)
    rep = discounted_cost(spec, ZERO, tr.fwd, tr.bwd, tr.density)
    assert rep.J == 0.0 and rep.stderr == 0.0
    assert set(rep.to_dict()) == {"J", "stderr", "form", "n_paths", "seed"}
    spec1 = spec.with_(running_cost_f=lambda x, y, z, zt, g, u: 1.0 + 0.0 * x)
    tr1 = solve_trajectory(spec1, ZERO, b)
    J = discounted_cost(spec1, ZERO, tr1.fwd, tr1.bwd, tr1.density).J
    assert J == pytest.approx((1 - math.exp(-0.5 * 6.0)) / 0.5, rel=1e-12)


def test_cost_form_measure_mismatch_and_nonfinite():
    spec = ModelSpec(running_cost_f=lambda x, y, z, zt, g, u: np.inf + 0.0 * x)
    b = small_bundle(spec, n_paths=10)
    tr = solve_trajectory(spec, ZERO, b)
    with pytest.raises(ValueError):
        cost_samples(spec, tr.fwd, tr.bwd, tr.density, "original_Pbar")
    with pytest.raises(NonFiniteCost):
        cost_samples(spec, tr.fwd, tr.bwd, tr.density, "transformed_P")


def test_cost_forms_agree_bounded_h():
    pre = get_preset("bounded-h-girsanov")
    ctrl = ControlProcess.constant(0.3)
    a = solve_trajectory(pre.spec, ctrl, small_bundle(pre.spec, 4.0, 200, 3000, 1), measure="P_bar")
    c = solve_trajectory(pre.spec, ctrl, small_bundle(pre.spec, 4.0, 200, 3000, 2))
    ra = discounted_cost(pre.spec, ctrl, a.fwd, a.bwd, None, "original_Pbar")
    rc = discounted_cost(pre.spec, ctrl, c.fwd, c.bwd, c.density, "transformed_P")
    assert within(ra.J, rc.J, math.hypot(ra.stderr, rc.stderr))


def test_admissibility_examples():
    spec = ModelSpec()
    b = small_bundle(spec, horizon=20.0, n_steps=400, n_paths=20)
    assert admissibility_check(ZERO, spec, simulate_forward(spec, ZERO, b), 1.0).moment == 0.0
    c, beta1 = 0.8, 1.0
    for k in (1, 2):
        ctrl = ControlProcess.constant(c)
        rep = admissibility_check(ctrl, spec, simulate_forward(spec, ctrl, b), beta1, k)
        assert rep.admissible
        assert rep.moment == pytest.approx(c ** (2 * k) / (beta1 * k) * (1 - math.exp(-beta1 * k * 20)))
    grow = ControlProcess.open_loop(lambda t: math.exp(t))
    assert not admissibility_check(grow, spec, simulate_forward(spec, grow, b), beta1).admissible
    with pytest.raises(ValueError):
        admissibility_check(ZERO, spec, simulate_forward(spec, ZERO, b), 1.0, k=0)


def test_variational_zero_direction(lq_small):
    b, tr = lq_small
    var = simulate_variational(LQ, tr.control, ZERO, tr, b)
    for arr in (var.x1, var.y1, var.z1, var.z_tilde1, var.Z1, var.y1_0_samples):
        assert np.all(arr == 0)


def test_variational_linear_in_direction(lq_small):
    b, tr = lq_small
    v1 = simulate_variational(LQ, tr.control, ControlProcess.open_loop(lambda t: math.sin(t)), tr, b)
    v2 = simulate_variational(LQ, tr.control, ControlProcess.open_loop(lambda t: 2 * math.sin(t)), tr, b)
    for a, c in ((v1.x1, v2.x1), (v1.y1, v2.y1), (v1.z1, v2.z1), (v1.Z1, v2.Z1)):
        np.testing.assert_allclose(c, 2 * a, atol=1e-10)


def test_variational_x1_oracle(lq_small):
    b, tr = lq_small
    var = simulate_variational(LQ, tr.control, ONE, tr, b)
    t = b.grid.times
    assert var.x1[:, 0].tolist() == [0.0] * b.n_paths and np.all(var.Z1[:, 0] == 0)
    # Euler for x' = -x + 1 is exact up to O(dt)
    np.testing.assert_allclose(var.x1[0], 1 - np.exp(-t), atol=0.02)
    # y1 solves y' = 3y - x1 backwards with y1(n) = 0, so y1_0 = ∫e^{-3s}(1 - e^{-s}) ds
    assert var.y1_0_samples.mean() == pytest.approx(1 / 3 - 1 / 4, rel=0.03)


def test_perturbation_zero_direction_and_rates():
    b = small_bundle(LQ, horizon=6.0, n_steps=240, n_paths=800, seed=4)
    tab0 = perturbation_convergence(LQ, ControlProcess.constant(0.5), ZERO, b, (0.1, 0.05))
    assert all(v == 0.0 for vals in tab0.norms.values() for v in vals)
    tab = perturbation_convergence(LQ, ControlProcess.constant(0.5), ONE, b, (0.1, 0.05, 0.025))
    assert tab.slopes["x"] == pytest.approx(1.0, abs=0.2)
    assert len(tab.rows()) == 2 * 6 * 3


def test_weighted_l2_constant():
    t = np.linspace(0, 10, 101)
    val = weighted_l2(np.ones((4, 101)), t, 1.0)
    assert val == pytest.approx(math.sqrt(1 - math.exp(-10)))


def test_lhs_zero_costs():
    spec = ModelSpec(drift_b=lambda x, u, t: -x + u)
    b = small_bundle(spec, n_paths=100)
    tr = solve_trajectory(spec, ZERO, b)
    var = simulate_variational(spec, ZERO, ONE, tr, b)
    assert variational_inequality_lhs(spec, b, ZERO, ONE, var, tr).value == 0.0


def test_lhs_negative_away_from_optimum_and_matches_dq():
    b = small_bundle(LQ, horizon=8.0, n_steps=320, n_paths=1500, seed=8)
    u0 = ControlProcess.constant(0.0)
    tr = solve_trajectory(LQ, u0, b)
    lhs = variational_inequality_lhs(LQ, b, u0, ONE, simulate_variational(LQ, u0, ONE, tr, b), tr)
    # J'(0) = (4/3)(0 - 1/2)
    assert lhs.value < -3 * lhs.stderr
    assert lhs.value == pytest.approx(-2 / 3, rel=0.05)
    dq = difference_quotient(LQ, u0, ONE, 0.025, b, bar=tr)
    assert dq.value == pytest.approx(lhs.value, rel=0.1)
