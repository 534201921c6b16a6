import math

import numpy as np
import pytest

from fbsdep.errors import NonFiniteCoefficient
from fbsdep.model import (DecayRates, DiscountProfile, Lipschitz, MarkSpace, ModelSpec, TimeGrid,
                          central_difference, confortola_constant, confortola_holds,
                          default_probes, discount_weights, effective_lipschitz,
                          validate_assumptions)
from fbsdep.presets import get_preset


def test_time_grid_basics():
    g = TimeGrid(2.0, 4)
    assert g.dt == 0.5
    np.testing.assert_allclose(g.times, [0, 0.5, 1, 1.5, 2])
    assert g.index_of(1.0) == 2
    with pytest.raises(ValueError):
        g.index_of(3.0)
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_mark_space_validation():
    m = MarkSpace((0.5, 1.0), (1.0, 2.0))
    assert m.size == 2 and m.total_intensity == 3.0
    with pytest.raises(ValueError):
        MarkSpace((0.5,), (1.0, 2.0))
    with pytest.raises(ValueError):
        MarkSpace((0.5,), (0.0,))


def test_discount_weights_exact_cells():
    t = np.linspace(0, 3, 31)
    w = discount_weights(t, 2.0)
    assert w.sum() == pytest.approx((1 - math.exp(-6)) / 2, rel=1e-14)
    np.testing.assert_allclose(discount_weights(t, 0.0), np.diff(t))


def test_effective_lipschitz_conventions():
    spec = ModelSpec(decay_rates=DecayRates(K1=2.0, K2=0.0))
    k = effective_lipschitz(spec, 1.0)
    assert k["K1"] == pytest.approx(math.exp(-1.0))
    assert k["K2"] == 1.0
    assert k["K3"] == 0.0
    with pytest.raises(ValueError):
        effective_lipschitz(spec, -1.0)


def test_b_tilde_and_chain_rule_partial():
    spec = get_preset("bounded-h-girsanov").spec
    x, u, t = 0.3, 0.2, 1.0
    expect = (-x + u) - math.exp(-0.5) * 0.3 * math.exp(-0.5) * math.tanh(x + u)
    assert float(spec.evaluate("b_tilde", x, u, t)) == pytest.approx(expect, rel=1e-14)
    fd = central_difference(lambda *a: spec.evaluate("b_tilde", *a), (np.array(x), np.array(u), np.array(t)), 0)
    assert float(spec.partial("b_tilde", "x", x, u, t)) == pytest.approx(float(fd), rel=1e-7)


def test_registered_partials_match_fd(lq_spec):
    args = (np.array(0.7), np.array(0.2), np.array(0.0), np.array(0.0), np.array(0.0), np.array(0.4))
    for wrt, idx in (("x", 0), ("y", 1), ("u", 5)):
        fd = central_difference(lambda *a: lq_spec.evaluate("f", *a), args, idx)
        assert float(lq_spec.partial("f", wrt, *args)) == pytest.approx(float(fd), rel=1e-8, abs=1e-10)


def test_partial_rejects_unknown_argument(lq_spec):
    with pytest.raises(KeyError):
        lq_spec.partial("h", "y", 0.0, 0.0)


def test_validation_passes_on_lq(lq_spec):
    rep = validate_assumptions(lq_spec, DiscountProfile.uniform(1.0), default_probes())
    assert rep.all_passed, rep.to_list()
    assert rep["A8"].margin == pytest.approx(1.0 + 2 * (-0.75))
    d = rep["A8"].to_dict()
    assert set(d) == {"assumption", "pass", "margin", "probe"}


def test_validation_reports_failures_with_margins():
    spec = ModelSpec(drift_b=lambda x, u, t: 2.0 * x, mu1=1.0, mu2=0.0, beta=1.0)
    rep = validate_assumptions(spec, DiscountProfile.uniform(1.0), default_probes())
    assert not rep["A2"].passed and rep["A2"].margin == pytest.approx(1.0)
    assert not rep["A8"].passed and rep["A8"].margin == pytest.approx(1.0)


def test_validation_flags_discount_ordering():
    spec = get_preset("lq-scalar").spec
    rep = validate_assumptions(spec, DiscountProfile(beta0=2.0, beta3=1.0), default_probes())
    assert not rep["discount-ordering"].passed


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_validation_raises_on_non_finite():
    spec = ModelSpec(running_cost_f=lambda x, y, z, zt, g, u: np.log(x - 10.0))
    with pytest.raises(NonFiniteCoefficient):
        validate_assumptions(spec, DiscountProfile.uniform(1.0), default_probes())


def test_validation_requires_probes(lq_spec):
    with pytest.raises(ValueError):
        validate_assumptions(lq_spec, DiscountProfile.uniform(1.0), [])


def test_confortola_constant_known_value():
    # k = 2: (1 - (1/(1+eps))^{1/3})^{-3}
    eps = 0.5
    assert confortola_constant(eps, 2) == pytest.approx((1 - (1 / 1.5) ** (1 / 3)) ** -3)
    with pytest.raises(ValueError):
        confortola_constant(0.0, 2)
    assert confortola_holds(1.0, 1.0, 0.1, 2)


def test_lipschitz_declared_constants_checked():
    spec = ModelSpec(diff_sigma=lambda x, u, t: 0.5 * x, lipschitz=Lipschitz(L_sigma=0.4), mu1=0.0)
    rep = validate_assumptions(spec, DiscountProfile.uniform(1.0), default_probes())
    assert not rep["A3-sigma"].passed
    assert rep["A3-sigma"].margin == pytest.approx(0.1)
