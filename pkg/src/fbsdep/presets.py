"""Catalog of ready-made problems.

Each entry builds a :class:`ModelSpec` together with run defaults (grid,
path count, reference control and test direction).  The linear-quadratic
instance is chosen so that every quantity the maximum principle talks about
has a closed form: with b = -x + u, g = -3y + x, f = x²/2 + u²/2 - u + y and
φ(y) = y/2 one gets p ≡ 1/2, q_t = (ū + 1/2)/2 + (x_t - ū)/3 and an optimal
constant control ū = 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import AffineBackward, DecayRates, Lipschitz, MarkSpace, ModelSpec


def _zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _const(c):
    return lambda *a: np.full(np.shape(a[0]), float(c))


@dataclass(frozen=True)
class Preset:
    name: str
    spec: ModelSpec
    horizon: float
    n_steps: int
    n_paths: int
    control: dict
    direction: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    horizons: tuple = ()
    description: str = ""


def zero() -> ModelSpec:
    # g ≡ 0 has monotonicity constant 0, so the strict backward condition
    # β + 2μ₂ < 0 cannot hold: validation reports that honestly.
    return ModelSpec(name="zero", beta=1.0, x0=0.0,
                     affine_backward=AffineBackward(0.0, lambda x, u, t: 0.0 * x,
                                                    lambda x, u: 0.0 * x))


def ou_forward() -> ModelSpec:
    return ModelSpec(
        drift_b=lambda x, u, t: -x + u,
        diff_sigma=lambda x, u, t: 0.5 + 0.0 * x,
        # g = -y keeps y ≡ 0 while satisfying the strict backward condition
        generator_g=lambda x, y, z, zt, g, u, t: -y + 0.0 * x,
        running_cost_f=lambda x, y, z, zt, g, u: x * x,
        mu1=-1.0, mu2=-1.0, lipschitz=Lipschitz(L_b=1.0), beta=1.0, x0=1.0,
        derivatives={"b_x": _const(-1.0), "b_u": _const(1.0)},
        affine_backward=AffineBackward(1.0, lambda x, u, t: 0.0 * x, lambda x, u: x * x),
        name="ou-forward",
    )


def linear_bsde() -> ModelSpec:
    return ou_forward().with_(
        generator_g=lambda x, y, z, zt, g, u, t: 1.0 - 2.0 * y,
        running_cost_f=lambda x, y, z, zt, g, u: y,
        mu2=-2.0,
        derivatives={"b_x": _const(-1.0), "b_u": _const(1.0), "g_y": _const(-2.0)},
        affine_backward=AffineBackward(2.0, lambda x, u, t: 1.0 + 0.0 * x, lambda x, u: 0.0 * x,
                                       c_f=1.0),
        name="linear-bsde",
    )


def jump_linear() -> ModelSpec:
    return ModelSpec(
        drift_b=lambda x, u, t: -x + u,
        diff_sigma=lambda x, u, t: 0.3 + 0.0 * x,
        jump_l=lambda x, u, e, t: 0.4 * e * x,
        generator_g=lambda x, y, z, zt, g, u, t: np.sin(x) - 3.5 * y + 0.3 * z + 0.3 * g,
        running_cost_f=lambda x, y, z, zt, g, u: x * x,
        mu1=-1.0, mu2=-3.5,
        lipschitz=Lipschitz(L_b=1.0, L_l=0.2),
        decay_rates=DecayRates(K1=0.0, K3=0.0),
        beta=1.0, x0=1.0,
        marks=MarkSpace((0.5,), (1.0,)),
        derivatives={"b_x": _const(-1.0), "b_u": _const(1.0),
                     "l_x": lambda x, u, e, t: 0.4 * e + 0.0 * x,
                     "g_y": _const(-3.5), "g_z": _const(0.3), "g_gamma": _const(0.3),
                     "g_x": lambda x, y, z, zt, g, u, t: np.cos(x)},
        name="jump-linear",
    )


def lq_scalar() -> ModelSpec:
    return ModelSpec(
        drift_b=lambda x, u, t: -x + u,
        diff_sigma=lambda x, u, t: 0.5 + 0.0 * x,
        generator_g=lambda x, y, z, zt, g, u, t: -3.0 * y + x,
        running_cost_f=lambda x, y, z, zt, g, u: 0.5 * x * x + 0.5 * u * u - u + y,
        initial_cost_phi=lambda y: 0.5 * y,
        mu1=-0.75, mu2=-0.75,
        lipschitz=Lipschitz(L_b=1.0),
        beta=1.0, x0=0.5, u_bounds=(-2.0, 2.0),
        derivatives={
            "b_x": _const(-1.0), "b_u": _const(1.0),
            "g_x": _const(1.0), "g_y": _const(-3.0),
            "f_x": lambda x, y, z, zt, g, u: x + 0.0 * u,
            "f_y": _const(1.0),
            "f_u": lambda x, y, z, zt, g, u: u - 1.0 + 0.0 * x,
            "phi_y": _const(0.5),
        },
        affine_backward=AffineBackward(
            kappa=3.0, source=lambda x, u, t: x,
            f0=lambda x, u: 0.5 * x * x + 0.5 * u * u - u, c_f=1.0, phi0=0.0, phi_c=0.5),
        name="lq-scalar",
    )


def lq_scalar_boundary() -> ModelSpec:
    """lq-scalar with U = [0, 1], a positive linear control cost and x₀ = 0.
    E[H_u] at u = 0 is positive, so the optimum sits on the boundary u = 0."""
    base = lq_scalar()
    d = dict(base.derivatives)
    d["f_u"] = lambda x, y, z, zt, g, u: u + 0.5 + 0.0 * x
    return base.with_(
        running_cost_f=lambda x, y, z, zt, g, u: 0.5 * x * x + 0.5 * u * u + 0.5 * u + y,
        x0=0.0, u_bounds=(0.0, 1.0), derivatives=d,
        affine_backward=AffineBackward(
            kappa=3.0, source=lambda x, u, t: x,
            f0=lambda x, u: 0.5 * x * x + 0.5 * u * u + 0.5 * u, c_f=1.0, phi0=0.0, phi_c=0.5),
        name="lq-scalar-boundary",
    )


def bounded_h_girsanov() -> ModelSpec:
    def sech2(x, u):
        return 1.0 - np.tanh(x + u) ** 2

    return ModelSpec(
        drift_b=lambda x, u, t: -x + u,
        diff_sigma=lambda x, u, t: 0.4 + 0.0 * x,
        diff_sigma_tilde=lambda x, u, t: 0.3 * np.exp(-0.5 * t) + 0.0 * x,
        jump_l=lambda x, u, e, t: e * (0.1 + 0.2 * np.tanh(x)),
        observation_h=lambda x, u: np.tanh(x + u),
        generator_g=lambda x, y, z, zt, g, u, t: -2.0 * y + np.sin(x),
        running_cost_f=lambda x, y, z, zt, g, u: x * x + 0.5 * y * y + 0.5 * u * u,
        mu1=-1.0, mu2=-2.0,
        lipschitz=Lipschitz(L_b=1.0, L_l=0.1),
        decay_rates=DecayRates(mu0=1.0),
        beta=1.0, x0=0.5,
        marks=MarkSpace((0.5,), (1.0,)),
        sigma_tilde_bound=0.3, h_bound=1.0, u_bounds=(-1.0, 1.0),
        derivatives={"b_x": _const(-1.0), "b_u": _const(1.0),
                     "h_x": sech2, "h_u": sech2,
                     "g_y": _const(-2.0),
                     "g_x": lambda x, y, z, zt, g, u, t: np.cos(x)},
        name="bounded-h-girsanov",
    )


PRESETS = {
    "zero": Preset("zero", zero(), 4.0, 200, 500, {"kind": "constant", "value": 0.0},
                   horizons=(1.0, 2.0, 4.0), description="all coefficients zero"),
    "ou-forward": Preset("ou-forward", ou_forward(), 4.0, 400, 4000,
                         {"kind": "constant", "value": 0.0},
                         description="Ornstein-Uhlenbeck state, trivial backward part"),
    "linear-bsde": Preset("linear-bsde", linear_bsde(), 8.0, 800, 2000,
                          {"kind": "constant", "value": 0.0}, horizons=(1.0, 2.0, 4.0, 8.0),
                          description="g = 1 - 2y with closed-form y"),
    "jump-linear": Preset("jump-linear", jump_linear(), 4.0, 400, 4000,
                          {"kind": "constant", "value": 0.0}, horizons=(1.0, 2.0, 4.0),
                          description="one jump mark, generator with z and gamma"),
    "lq-scalar": Preset("lq-scalar", lq_scalar(), 12.0, 600, 4000,
                        {"kind": "constant", "value": 0.5}, horizons=(6.0, 12.0),
                        description="scalar linear-quadratic maximum principle instance"),
    "lq-scalar-boundary": Preset("lq-scalar-boundary", lq_scalar_boundary(), 12.0, 600, 4000,
                                 {"kind": "constant", "value": 0.0}, horizons=(6.0, 12.0),
                                 description="lq-scalar with the optimum on the boundary of U"),
    "bounded-h-girsanov": Preset("bounded-h-girsanov", bounded_h_girsanov(), 8.0, 400, 4000,
                                 {"kind": "constant", "value": 0.3}, horizons=(4.0, 8.0),
                                 description="bounded observation drift, measure change active"),
}

ALIASES = {"ou-lq-scalar": "lq-scalar"}


def get_preset(name: str) -> Preset:
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise KeyError(name)
    return PRESETS[key]


def preset_names() -> list:
    return sorted(PRESETS)
