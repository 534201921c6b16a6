"""Problem data for the partially observed infinite-horizon FBSDE with jumps.

A :class:`ModelSpec` bundles the coefficient closures (state drift and
diffusions, jump amplitude, backward generator, costs, observation drift)
with the structural constants that the solvability theory is phrased in:
monotonicity constants, Lipschitz bounds, exponential decay rates of the
generator's Lipschitz functions and the discount factor.

Every coefficient is a vectorised numpy closure.  Argument orders are::

    b, sigma, sigma_tilde : (x, u, t)
    l                     : (x, u, e, t)
    g                     : (x, y, z, z_tilde, gamma, u, t)   # gamma = sum_i gamma_i nu_i
    f                     : (x, y, z, z_tilde, gamma, u)
    phi                   : (y,)
    h                     : (x, u)
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import NonFiniteCoefficient

COEFFICIENT_ARGS = {
    "b": ("x", "u", "t"),
    "sigma": ("x", "u", "t"),
    "sigma_tilde": ("x", "u", "t"),
    "b_tilde": ("x", "u", "t"),
    "l": ("x", "u", "e", "t"),
    "g": ("x", "y", "z", "z_tilde", "gamma", "u", "t"),
    "f": ("x", "y", "z", "z_tilde", "gamma", "u"),
    "phi": ("y",),
    "h": ("x", "u"),
}

FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class MarkSpace:
    """Finite jump-mark set with Poisson intensities (events per unit time)."""

    marks: tuple = ()
    intensities: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "marks", tuple(float(m) for m in self.marks))
        object.__setattr__(self, "intensities", tuple(float(v) for v in self.intensities))
        if len(self.marks) != len(self.intensities):
            raise ValueError("marks and intensities must have equal length")
        if any(not (v > 0 and math.isfinite(v)) for v in self.intensities):
            raise ValueError("intensities must be positive and finite")

    @property
    def size(self) -> int:
        return len(self.marks)

    @property
    def total_intensity(self) -> float:
        return float(sum(self.intensities))

    @property
    def nu(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=float)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform mesh of the truncated horizon [0, T]."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of the largest grid point not exceeding ``t`` (rounded)."""
        j = int(round(t / self.dt))
        if j < 0 or j > self.n_steps:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        return j


@dataclass(frozen=True)
class DiscountProfile:
    """Per-estimate discount factors beta_0 .. beta_5 of the moment estimates."""

    beta0: float = 1.0
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 1.0
    beta4: float = 1.0
    beta5: float = 1.0

    def ordering_violations(self, beta: Optional[float] = None) -> list:
        """Human-readable list of violated ordering constraints (empty if fine)."""
        out = []
        if self.beta0 > min(self.beta3, self.beta4):
            out.append("beta0 <= min(beta3, beta4)")
        if self.beta1 > min(self.beta2, self.beta3, self.beta4):
            out.append("beta1 <= min(beta2, beta3, beta4)")
        if self.beta5 > self.beta2:
            out.append("beta5 <= beta2")
        if beta is not None and beta < self.max_beta:
            out.append("beta >= max_i beta_i")
        return out

    @property
    def max_beta(self) -> float:
        return max(self.beta0, self.beta1, self.beta2, self.beta3, self.beta4, self.beta5)

    @classmethod
    def uniform(cls, value: float) -> "DiscountProfile":
        return cls(*(value,) * 6)


@dataclass(frozen=True)
class Lipschitz:
    L_b: float = 0.0
    L_sigma: float = 0.0
    L_sigma_tilde: float = 0.0
    L_l: float = 0.0


@dataclass(frozen=True)
class DecayRates:
    """Rates of K_i(t) = exp(-K_i t / 2).  ``math.inf`` means the generator
    does not depend on that argument, so the Lipschitz function is zero."""

    K0: float = math.inf
    K1: float = math.inf
    K2: float = math.inf
    K3: float = math.inf
    K4: float = math.inf
    mu0: float = 0.0


@dataclass(frozen=True)
class AffineBackward:
    """Optional declaration that g = -kappa*y + source(x, u, t), f = f0(x, u) + c_f*y
    and phi(y) = phi0 + phi_c*y.  Lets oracles price the backward part of the
    cost pathwise, without a regression solver."""

    kappa: float
    source: Callable
    f0: Callable
    c_f: float = 0.0
    phi0: float = 0.0
    phi_c: float = 0.0


def _zero_bxt(x, u, t):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_l(x, u, e, t):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_g(x, y, z, zt, gam, u, t):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_f(x, y, z, zt, gam, u):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_phi(y):
    return np.zeros_like(np.asarray(y, dtype=float))


def _zero_h(x, u):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients and structural constants.  Immutable; use :meth:`with_` for variants."""

    drift_b: Callable = _zero_bxt
    diff_sigma: Callable = _zero_bxt
    diff_sigma_tilde: Callable = _zero_bxt
    jump_l: Callable = _zero_l
    generator_g: Callable = _zero_g
    running_cost_f: Callable = _zero_f
    initial_cost_phi: Callable = _zero_phi
    observation_h: Callable = _zero_h
    mu1: float = 0.0
    mu2: float = 0.0
    lipschitz: Lipschitz = Lipschitz()
    decay_rates: DecayRates = DecayRates()
    beta: float = 1.0
    x0: object = 0.0
    marks: MarkSpace = MarkSpace()
    growth_mode: str = "H1"
    K_growth: float = 0.0
    sigma_tilde_bound: float = 1.0
    h_bound: Optional[float] = None
    u_bounds: tuple = (-math.inf, math.inf)
    derivatives: Mapping[str, Callable] = field(default_factory=dict)
    affine_backward: Optional[AffineBackward] = None
    name: str = "custom"

    def __post_init__(self):
        if self.growth_mode not in ("H1", "H1prime"):
            raise ValueError("growth_mode must be 'H1' or 'H1prime'")
        object.__setattr__(self, "derivatives", MappingProxyType(dict(self.derivatives)))
        lo, hi = self.u_bounds
        if lo > hi:
            raise ValueError("u_bounds must satisfy lo <= hi")

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    # -- evaluation -------------------------------------------------------
    def _raw(self, name):
        if name == "b_tilde":
            return self._b_tilde
        return {
            "b": self.drift_b,
            "sigma": self.diff_sigma,
            "sigma_tilde": self.diff_sigma_tilde,
            "l": self.jump_l,
            "g": self.generator_g,
            "f": self.running_cost_f,
            "phi": self.initial_cost_phi,
            "h": self.observation_h,
        }[name]

    def _b_tilde(self, x, u, t):
        disc = np.exp(-0.5 * self.beta * np.asarray(t, dtype=float))
        return (self.drift_b(x, u, t)
                - disc * self.diff_sigma_tilde(x, u, t) * self.observation_h(x, u))

    def evaluate(self, name: str, *args) -> np.ndarray:
        """Evaluate coefficient ``name``, broadcasting the result to the args' shape."""
        args = tuple(np.asarray(a, dtype=float) for a in args)
        shape = np.broadcast_shapes(*(a.shape for a in args))
        val = np.asarray(self._raw(name)(*args), dtype=float)
        return np.broadcast_to(val, shape).copy() if val.shape != shape else val

    def partial(self, name: str, wrt: str, *args) -> np.ndarray:
        """Partial derivative of a coefficient.

        Registered analytic derivatives (key ``"{name}_{wrt}"``) win; ``b_tilde``
        uses the chain rule over its components; anything else falls back to a
        central difference with relative step 1e-5.
        """
        names = COEFFICIENT_ARGS[name]
        if wrt not in names:
            raise KeyError(f"{name} has no argument {wrt!r}")
        args = tuple(np.asarray(a, dtype=float) for a in args)
        shape = np.broadcast_shapes(*(a.shape for a in args))
        key = f"{name}_{wrt}"
        if key in self.derivatives:
            val = np.asarray(self.derivatives[key](*args), dtype=float)
            return np.broadcast_to(val, shape).copy()
        if name == "b_tilde" and wrt in ("x", "u"):
            x, u, t = args
            disc = np.exp(-0.5 * self.beta * t)
            st = self.evaluate("sigma_tilde", x, u, t)
            hv = self.evaluate("h", x, u)
            return (self.partial("b", wrt, x, u, t)
                    - disc * (self.partial("sigma_tilde", wrt, x, u, t) * hv
                              + st * self.partial("h", wrt, x, u)))
        return central_difference(lambda *a: self.evaluate(name, *a), args, names.index(wrt))

    def discount(self, t) -> np.ndarray:
        return np.exp(-self.beta * np.asarray(t, dtype=float))

    def initial_state(self, n_paths: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        if callable(self.x0):
            if rng is None:
                raise ValueError("a random initial state needs a generator")
            return np.asarray(self.x0(n_paths, rng), dtype=float).reshape(n_paths)
        return np.full(n_paths, float(self.x0))


def central_difference(fn: Callable, args: Sequence[np.ndarray], index: int,
                       rel_step: float = FD_REL_STEP) -> np.ndarray:
    """Central difference of ``fn`` in argument ``index``; step = rel_step*max(1, |a|)."""
    a = np.asarray(args[index], dtype=float)
    h = rel_step * np.maximum(1.0, np.abs(a))
    up = list(args)
    dn = list(args)
    up[index] = a + h
    dn[index] = a - h
    return (fn(*up) - fn(*dn)) / (2.0 * h)


def discount_weights(times: np.ndarray, beta: float) -> np.ndarray:
    """Exact integrals of exp(-beta s) over each grid cell [t_j, t_{j+1}].

    Pairing these with left-point integrand values gives the quadrature used
    for every discounted time integral in the package.
    """
    times = np.asarray(times, dtype=float)
    if beta == 0.0:
        return np.diff(times)
    e = np.exp(-beta * times)
    return (e[:-1] - e[1:]) / beta


def effective_lipschitz(spec: ModelSpec, t: float) -> dict:
    """Values K_i(t) = exp(-K_i t / 2); an infinite rate gives 0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    out = {}
    for key in ("K0", "K1", "K2", "K3", "K4"):
        rate = getattr(spec.decay_rates, key)
        out[key] = 0.0 if math.isinf(rate) else math.exp(-0.5 * rate * t)
    return out


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationEntry:
    """One checked inequality.  ``margin`` is lhs - rhs of the inequality in
    ``lhs < rhs`` (or ``<=``) form, so a nonpositive margin means it holds."""

    assumption: str
    passed: bool
    margin: float
    probe: Optional[tuple] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "assumption": self.assumption,
            "pass": bool(self.passed),
            "margin": float(self.margin),
            "probe": None if self.probe is None else [float(v) for v in self.probe],
        }


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __getitem__(self, name: str) -> ValidationEntry:
        for e in self.entries:
            if e.assumption == name:
                return e
        raise KeyError(name)

    def names(self) -> list:
        return [e.assumption for e in self.entries]

    def to_list(self) -> list:
        return [e.to_dict() for e in self.entries]


def _check_finite(values, what, probe):
    if not np.all(np.isfinite(values)):
        raise NonFiniteCoefficient(f"{what} is not finite at probe {tuple(probe)}")


def _pairwise_max(ratio_fn, xs):
    """Max of ratio_fn(x1, x2) over distinct pairs; returns (value, pair)."""
    best, arg = -math.inf, None
    for x1, x2 in itertools.combinations(xs, 2):
        if x1 == x2:
            continue
        r = ratio_fn(x1, x2)
        if r > best:
            best, arg = r, (x1, x2)
    return best, arg


def validate_assumptions(spec: ModelSpec, profile: DiscountProfile,
                         probe_points: Sequence[tuple]) -> ValidationReport:
    """Check the standing assumptions on probe points ``(x, u, t)``.

    Monotonicity and Lipschitz constants are checked pairwise over the probe
    x-values at each probe's (u, t); derivative bounds use central differences.
    Raises :class:`NonFiniteCoefficient` if any coefficient is NaN/inf at a probe.
    """
    probes = [tuple(float(v) for v in p) for p in probe_points]
    if not probes:
        raise ValueError("probe_points must be non-empty")
    xs = sorted({p[0] for p in probes})
    nu = spec.marks.nu
    marks = np.asarray(spec.marks.marks, dtype=float)
    entries = []

    for p in probes:
        x, u, t = p
        for name in ("b", "sigma", "sigma_tilde"):
            _check_finite(spec.evaluate(name, x, u, t), name, p)
        for e in marks:
            _check_finite(spec.evaluate("l", x, u, e, t), "l", p)
        _check_finite(spec.evaluate("g", x, x, x, x, x, u, t), "g", p)
        _check_finite(spec.evaluate("f", x, x, x, x, x, u), "f", p)
        _check_finite(spec.evaluate("phi", x), "phi", p)
        _check_finite(spec.evaluate("h", x, u), "h", p)

    k = effective_lipschitz(spec, 0.0)
    a8 = spec.beta + 2 * spec.mu2 + 2 * (k["K1"] ** 2 + k["K2"] ** 2 + k["K3"] ** 2 + k["K4"] ** 2)
    entries.append(ValidationEntry("A8", a8 < 0, a8, (0.0,),
                                   "beta + 2 mu2 + 2 sum K_i(0)^2 < 0"))

    L = spec.lipschitz
    th = 2 * spec.mu1 + L.L_sigma ** 2 + L.L_sigma_tilde ** 2 + L.L_l ** 2 - spec.beta
    entries.append(ValidationEntry("forward-solvability", th < 0, th, None,
                                   "beta > 2 mu1 + L_sigma^2 + L_sigma_tilde^2 + L_l^2"))

    # (A1): |sigma_tilde| <= C exp(-mu0 t / 2)
    worst, wp = -math.inf, None
    for p in probes:
        x, u, t = p
        m = abs(float(spec.evaluate("sigma_tilde", x, u, t))) \
            - spec.sigma_tilde_bound * math.exp(-0.5 * spec.decay_rates.mu0 * t)
        if m > worst:
            worst, wp = m, p
    entries.append(ValidationEntry("A1-decay", worst <= 0, worst, wp,
                                   "|sigma_tilde(x,u,t)| <= C exp(-mu0 t/2)"))

    # (A1): bounded derivatives of b, sigma, sigma_tilde, l
    worst_d = 0.0
    for p in probes:
        x, u, t = p
        for name in ("b", "sigma", "sigma_tilde"):
            for wrt in ("x", "u"):
                worst_d = max(worst_d, abs(float(spec.partial(name, wrt, x, u, t))))
        for e in marks:
            for wrt in ("x", "u"):
                worst_d = max(worst_d, abs(float(spec.partial("l", wrt, x, u, e, t))))
    entries.append(ValidationEntry("A1-derivatives", math.isfinite(worst_d), 0.0 if math.isfinite(worst_d) else math.inf,
                                   None, f"max |coefficient derivative| on probes = {worst_d:.6g}"))

    # (H0): h bounded with bounded derivatives
    hmax = max(abs(float(spec.evaluate("h", p[0], p[1]))) for p in probes)
    hdmax = max(max(abs(float(spec.partial("h", "x", p[0], p[1]))),
                    abs(float(spec.partial("h", "u", p[0], p[1])))) for p in probes)
    bound = spec.h_bound if spec.h_bound is not None else math.inf
    m = hmax - bound if math.isfinite(bound) else (0.0 if math.isfinite(hmax) else math.inf)
    entries.append(ValidationEntry("H0", bool(m <= 0 and math.isfinite(hdmax)), m, None,
                                   f"max|h| = {hmax:.6g}, max|h_x|,|h_u| = {hdmax:.6g}"))

    # (A2): monotonicity of b, pairwise at each (u, t)
    worst, wp = -math.inf, None
    for u, t in sorted({(p[1], p[2]) for p in probes}):
        val, pair = _pairwise_max(
            lambda a, c: float((spec.evaluate("b", a, u, t) - spec.evaluate("b", c, u, t)) / (a - c)),
            xs)
        if pair is not None and val - spec.mu1 > worst:
            worst, wp = val - spec.mu1, (pair[0], pair[1], u, t)
    if wp is not None:
        entries.append(ValidationEntry("A2", worst <= 1e-9, worst, wp,
                                       "<x1-x2, b(x1)-b(x2)> <= mu1 |x1-x2|^2"))

    # (A3): Lipschitz bounds
    for name, Lc in (("b", L.L_b), ("sigma", L.L_sigma), ("sigma_tilde", L.L_sigma_tilde)):
        worst, wp = -math.inf, None
        for u, t in sorted({(p[1], p[2]) for p in probes}):
            val, pair = _pairwise_max(
                lambda a, c: float(abs(spec.evaluate(name, a, u, t) - spec.evaluate(name, c, u, t)) / abs(a - c)),
                xs)
            if pair is not None and val - Lc > worst:
                worst, wp = val - Lc, (pair[0], pair[1], u, t)
        if wp is not None:
            entries.append(ValidationEntry(f"A3-{name}", worst <= 1e-9, worst, wp,
                                           f"|{name}(x1)-{name}(x2)| <= L |x1-x2|"))
    if spec.marks.size:
        worst, wp = -math.inf, None
        for u, t in sorted({(p[1], p[2]) for p in probes}):
            def lnorm(a, c):
                d = np.array([float(spec.evaluate("l", a, u, e, t) - spec.evaluate("l", c, u, e, t))
                              for e in marks])
                return float(np.sqrt(np.sum(nu * d ** 2)) / abs(a - c))
            val, pair = _pairwise_max(lnorm, xs)
            if pair is not None and val - L.L_l > worst:
                worst, wp = val - L.L_l, (pair[0], pair[1], u, t)
        if wp is not None:
            entries.append(ValidationEntry("A3-l", worst <= 1e-9, worst, wp,
                                           "||l(x1)-l(x2)|| <= L_l |x1-x2|"))

    # (A6): monotonicity of g in y; (A7): Lipschitz in z, z_tilde, gamma, u
    worst6, wp6 = -math.inf, None
    worst7, wp7 = -math.inf, None
    for x, u, t in probes:
        kt = effective_lipschitz(spec, t)
        val, pair = _pairwise_max(
            lambda a, c: float((spec.evaluate("g", x, a, 0, 0, 0, u, t)
                                - spec.evaluate("g", x, c, 0, 0, 0, u, t)) / (a - c)),
            xs)
        if pair is not None and val - spec.mu2 > worst6:
            worst6, wp6 = val - spec.mu2, (x, u, t)
        for slot, key in ((2, "K1"), (3, "K2"), (4, "K3"), (5, "K4")):
            def g_slot(a, c, slot=slot):
                hi = [x, 0.0, 0.0, 0.0, 0.0, u, t]
                lo = list(hi)
                hi[slot], lo[slot] = a, c
                return float(abs(spec.evaluate("g", *hi) - spec.evaluate("g", *lo)) / abs(a - c))
            val, pair = _pairwise_max(g_slot, xs)
            if pair is not None and val - kt[key] > worst7:
                worst7, wp7 = val - kt[key], (x, u, t)
    if wp6 is not None:
        entries.append(ValidationEntry("A6", worst6 <= 1e-9, worst6, wp6,
                                       "<y1-y2, g(y1)-g(y2)> <= mu2 |y1-y2|^2"))
    if wp7 is not None:
        entries.append(ValidationEntry("A7", worst7 <= 1e-9, worst7, wp7,
                                       "|g(.,z1,..)-g(.,z2,..)| <= K_i(t)|z1-z2| for z, z_tilde, gamma, u"))

    # (H1): quadratic growth of f, optionally with exp(-K t) envelope
    growth = 0.0
    for x, u, t in probes:
        env = math.exp(-spec.K_growth * t) if spec.growth_mode == "H1prime" else 1.0
        fv = abs(float(spec.evaluate("f", x, x, x, x, x, u)))
        growth = max(growth, fv / (env * (1 + 5 * x * x + u * u)))
    entries.append(ValidationEntry("H1", math.isfinite(growth), 0.0, None,
                                   f"fitted quadratic-growth constant {growth:.6g}"))

    viol = profile.ordering_violations(spec.beta)
    entries.append(ValidationEntry("discount-ordering", not viol, float(len(viol)), None,
                                   "; ".join(viol) or "ordering holds"))
    return ValidationReport(tuple(entries))


def default_probes(x_values=(-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0), u_values=(0.0,),
                   t_values=(0.0, 1.0, 2.0)) -> list:
    return [(x, u, t) for x in x_values for u in u_values for t in t_values]


def confortola_constant(epsilon: float, k: int) -> float:
    """c_eps = (1 - (1/(1+eps))^(1/(2k-1)))^(1-2k)."""
    if k < 2 or epsilon <= 0:
        raise ValueError("need k >= 2 and epsilon > 0")
    return (1.0 - (1.0 / (1.0 + epsilon)) ** (1.0 / (2 * k - 1))) ** (1 - 2 * k)


def confortola_holds(a: float, b: float, epsilon: float, k: int, rtol: float = 1e-12) -> bool:
    """|a+b|^{2k} <= (1+eps)|a|^{2k} + c_eps |b|^{2k} (with a rounding allowance)."""
    lhs = abs(a + b) ** (2 * k)
    rhs = (1 + epsilon) * abs(a) ** (2 * k) + confortola_constant(epsilon, k) * abs(b) ** (2 * k)
    return lhs <= rhs * (1 + rtol) + 1e-300
