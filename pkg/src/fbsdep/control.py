"""Controls, discounted costs, variational systems and the variational inequality."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .backward import (BackwardSolution, RegressionBasis, backward_sweep, feature_path,
                       solve_bsdep_zero_terminal)
from .errors import NonFiniteCost
from .forward import ForwardPath, simulate_forward, xi_features
from .measure import DensityPath, XiPath, girsanov_density, observation_process
from .model import ModelSpec, discount_weights
from .noise import NoiseBundle

FORMS = ("original_Pbar", "transformed_P")


@dataclass(frozen=True, eq=False)
class ControlProcess:
    """A control law ``evaluator(t, x, features) -> values``.

    Unless ``full_observation`` is set the evaluator receives ``x=None`` and
    may only use the observation statistics in ``features`` (keys ``xi`` and
    ``xi_mean``), which keeps the control adapted to the observation filtration.
    """

    kind: str
    evaluator: Callable
    u_bounds: tuple = (-math.inf, math.inf)
    full_observation: bool = False
    label: str = ""
    admissibility_beta1: float = 1.0
    k_max: int = 2

    def evaluate(self, t, x, features) -> np.ndarray:
        ref = features["xi"]
        val = self.evaluator(t, x if self.full_observation else None, features)
        return np.broadcast_to(np.asarray(val, dtype=float), np.shape(ref))

    def in_bounds(self, values) -> bool:
        lo, hi = self.u_bounds
        v = np.asarray(values)
        return bool(np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12))

    @classmethod
    def constant(cls, c: float, u_bounds=(-math.inf, math.inf)) -> "ControlProcess":
        c = float(c)
        return cls("constant", lambda t, x, f: c, u_bounds, label=f"constant({c:g})")

    @classmethod
    def open_loop(cls, fn: Callable, u_bounds=(-math.inf, math.inf), label="open_loop") -> "ControlProcess":
        return cls("open_loop", lambda t, x, f: fn(t), u_bounds, label=label)

    @classmethod
    def observation_feedback(cls, fn: Callable, u_bounds=(-math.inf, math.inf),
                             label="xi_feedback") -> "ControlProcess":
        """``fn(t, features)`` using observation statistics only."""
        return cls("parametrized", lambda t, x, f: fn(t, f), u_bounds, label=label)

    @classmethod
    def feedback(cls, fn: Callable, u_bounds=(-math.inf, math.inf), label="feedback") -> "ControlProcess":
        """State feedback ``fn(t, x)``; needs full observation (oracle runs only)."""
        return cls("feedback", lambda t, x, f: fn(t, x), u_bounds, full_observation=True, label=label)

    def perturbed(self, v: "ControlProcess", epsilon: float) -> "ControlProcess":
        """The convex perturbation ū + εv."""
        full = self.full_observation or v.full_observation
        eps = float(epsilon)
        a, b = self, v

        def ev(t, x, f):
            return (np.asarray(a.evaluator(t, x if a.full_observation else None, f), dtype=float)
                    + eps * np.asarray(b.evaluator(t, x if b.full_observation else None, f), dtype=float))
        return ControlProcess("parametrized", ev, self.u_bounds, full,
                              label=f"{self.label}+{eps:g}*{v.label}")


def control_values(control: ControlProcess, fwd: ForwardPath) -> np.ndarray:
    """Values of ``control`` along the (already simulated) path, shape (paths, steps)."""
    t = fwd.grid.times
    dt = fwd.grid.dt
    out = np.empty_like(fwd.u)
    run = np.zeros(fwd.n_paths)
    for j in range(fwd.grid.n_steps):
        out[:, j] = control.evaluate(t[j], fwd.x[:, j], xi_features(fwd.xi[:, j], run, t[j]))
        run = run + fwd.xi[:, j] * dt
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    control: ControlProcess
    fwd: ForwardPath
    bwd: BackwardSolution
    xi: XiPath
    density: DensityPath
    features: np.ndarray
    basis: RegressionBasis = RegressionBasis()


def solve_trajectory(spec: ModelSpec, control: ControlProcess, bundle: NoiseBundle,
                     n: Optional[float] = None, basis: RegressionBasis = RegressionBasis(),
                     measure: str = "P_transformed",
                     features: Optional[np.ndarray] = None) -> Trajectory:
    """Forward path, zero-terminal backward solution at horizon ``n``, ξ and density.

    Passing ``features`` from a reference trajectory makes every regression
    share one design, which keeps pathwise differences across perturbations smooth.
    """
    fwd = simulate_forward(spec, control, bundle, measure)
    feats = features if features is not None else feature_path(fwd, basis)
    n = bundle.grid.horizon if n is None else n
    bwd = solve_bsdep_zero_terminal(spec, fwd, bundle, n, basis, features=feats)
    xi = observation_process(fwd, control, spec, bundle)
    dens = girsanov_density(fwd, control, spec, xi)
    return Trajectory(control, fwd, bwd, xi, dens, feats, basis)


def _se(s: np.ndarray) -> float:
    return float(s.std(ddof=1) / math.sqrt(s.shape[0])) if s.shape[0] > 1 else 0.0


@dataclass(frozen=True)
class CostReport:
    J: float
    stderr: float
    form: str
    n_paths: int
    seed: int

    def to_dict(self) -> dict:
        return {"J": self.J, "stderr": self.stderr, "form": self.form,
                "n_paths": self.n_paths, "seed": self.seed}


def cost_samples(spec: ModelSpec, fwd: ForwardPath, bwd: BackwardSolution,
                 density: Optional[DensityPath], form: str) -> np.ndarray:
    """Per-path cost contributions whose mean is J.

    The φ(y_0) term is linearised around the regressed y_0 with the pathwise
    unbiased y_0 samples, so the spread of the backward estimate enters the
    standard error.
    """
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if form == "original_Pbar" and fwd.measure != "P_bar":
        raise ValueError("original_Pbar form needs a forward path simulated under P_bar")
    if form == "transformed_P" and fwd.measure != "P_transformed":
        raise ValueError("transformed_P form needs a forward path simulated under P_transformed")
    grid = fwd.grid
    k = bwd.n_idx
    t = grid.times[:k]
    w = discount_weights(grid.times, spec.beta)[:k]
    fv = spec.evaluate("f", fwd.x[:, :k], bwd.y[:, :k], bwd.z[:, :k], bwd.z_tilde[:, :k],
                       bwd.gamma_integral()[:, :k], fwd.u[:, :k])
    if form == "transformed_P":
        fv = fv * density.Z[:, :k]
    running = fv @ w
    y0 = bwd.y[:, 0]
    phi = spec.evaluate("phi", y0) + spec.partial("phi", "y", y0) * (bwd.y0_samples - y0)
    out = running + phi
    if not np.all(np.isfinite(out)):
        raise NonFiniteCost("discounted cost integrand is not finite")
    return out


def discounted_cost(spec: ModelSpec, control: ControlProcess, fwd: ForwardPath,
                    bwd: BackwardSolution, density: Optional[DensityPath],
                    form: str = "transformed_P") -> CostReport:
    s = cost_samples(spec, fwd, bwd, density, form)
    return CostReport(float(s.mean()), _se(s), form, int(s.shape[0]), int(fwd.seed))


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    moment: float
    half_horizon_moment: float
    beta1: float
    k: int


def admissibility_check(control: ControlProcess, spec: ModelSpec, fwd: ForwardPath, beta1: float,
                        k: int = 1, density: Optional[DensityPath] = None,
                        rtol: float = 0.05) -> AdmissibilityReport:
    """E∫e^{-β₁kt}|u|^{2k}dt on [0, T] and [0, T/2]; admissible when finite and
    the second half adds at most ``rtol`` relative mass."""
    if k < 1:
        raise ValueError("k must be >= 1")
    grid = fwd.grid
    w = discount_weights(grid.times, beta1 * k)
    vals = np.abs(fwd.u) ** (2 * k)
    if density is not None:
        vals = vals * density.Z[:, :-1]
    full = float(np.mean(vals @ w))
    half = grid.n_steps // 2
    part = float(np.mean(vals[:, :half] @ w[:half]))
    ok = bool(np.isfinite(full) and full <= (1 + rtol) * part + 1e-300)
    return AdmissibilityReport(ok, full, part, float(beta1), int(k))


@dataclass(frozen=True, eq=False)
class VariationalBundle:
    x1: np.ndarray
    y1: np.ndarray
    z1: np.ndarray
    z_tilde1: np.ndarray
    gamma1: np.ndarray
    Z1: np.ndarray
    v: np.ndarray
    y1_0_samples: np.ndarray
    n_idx: int

    def scaled(self, c: float) -> "VariationalBundle":
        return VariationalBundle(c * self.x1, c * self.y1, c * self.z1, c * self.z_tilde1,
                                 c * self.gamma1, c * self.Z1, c * self.v, c * self.y1_0_samples,
                                 self.n_idx)


@dataclass(frozen=True, eq=False)
class BarPartials:
    """Coefficient partials along the reference trajectory, shape (paths, steps)."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]


def bar_partials(spec: ModelSpec, traj: Trajectory) -> BarPartials:
    fwd, bwd = traj.fwd, traj.bwd
    grid = fwd.grid
    N = grid.n_steps
    t = grid.times[:-1]
    x, u = fwd.x[:, :-1], fwd.u
    y, z, zt = bwd.y[:, :-1], bwd.z[:, :-1], bwd.z_tilde[:, :-1]
    gi = bwd.gamma_integral()
    d = {}
    for name in ("b_tilde", "sigma", "sigma_tilde"):
        for wrt in ("x", "u"):
            d[f"{name}_{wrt}"] = spec.partial(name, wrt, x, u, t)
    for i, e in enumerate(spec.marks.marks):
        for wrt in ("x", "u"):
            d[f"l_{wrt}_{i}"] = spec.partial("l", wrt, x, u, e, t)
    gargs = (x, y, z, zt, gi, u, t)
    fargs = (x, y, z, zt, gi, u)
    for wrt in ("x", "y", "z", "z_tilde", "gamma", "u"):
        d[f"g_{wrt}"] = spec.partial("g", wrt, *gargs)
        d[f"f_{wrt}"] = spec.partial("f", wrt, *fargs)
    d["f"] = spec.evaluate("f", *fargs)
    d["g"] = spec.evaluate("g", *gargs)
    for wrt in ("x", "u"):
        d[f"h_{wrt}"] = spec.partial("h", wrt, x, u)
    d["h"] = spec.evaluate("h", x, u)
    d["disc_half"] = np.broadcast_to(np.exp(-0.5 * spec.beta * t), x.shape)
    return BarPartials(d)


def simulate_variational(spec: ModelSpec, u_bar: ControlProcess, v: ControlProcess,
                         traj: Trajectory, bundle: NoiseBundle,
                         basis: Optional[RegressionBasis] = None,
                         partials: Optional[BarPartials] = None) -> VariationalBundle:
    """Linearised system along the reference trajectory ``traj`` (controlled by ``u_bar``).

    x1 and Z1 by forward Euler (Z1 = Z̄·L with L the derivative of log Z), then
    (y1, z1, z̃1, γ1) by the regression sweep with the linear generator and
    the same design as the reference solution.
    """
    fwd, bwd = traj.fwd, traj.bwd
    grid = fwd.grid
    N, dt = grid.n_steps, grid.dt
    P = fwd.n_paths
    D = partials if partials is not None else bar_partials(spec, traj)
    vv = control_values(v, fwd)
    comp = bundle.compensated_increments() if spec.marks.size else None
    x1 = np.zeros((P, N + 1))
    L = np.zeros((P, N + 1))
    dxi = fwd.dxi
    e = D["disc_half"]
    for j in range(N):
        a = x1[:, j]
        step = ((D["b_tilde_x"][:, j] * a + D["b_tilde_u"][:, j] * vv[:, j]) * dt
                + (D["sigma_x"][:, j] * a + D["sigma_u"][:, j] * vv[:, j]) * bundle.dW[:, j]
                + (D["sigma_tilde_x"][:, j] * a + D["sigma_tilde_u"][:, j] * vv[:, j]) * dxi[:, j])
        for i in range(spec.marks.size):
            step = step + (D[f"l_x_{i}"][:, j] * a + D[f"l_u_{i}"][:, j] * vv[:, j]) * comp[:, j, i]
        x1[:, j + 1] = a + step
        hp = D["h_x"][:, j] * a + D["h_u"][:, j] * vv[:, j]
        L[:, j + 1] = L[:, j] + e[:, j] * hp * dxi[:, j] - e[:, j] ** 2 * D["h"][:, j] * hp * dt
    Z1 = traj.density.Z * L

    nu = spec.marks.nu

    def driver(j, y, z, gam):
        gsum = gam @ nu if gam is not None else 0.0
        return (D["g_x"][:, j] * x1[:, j] + D["g_y"][:, j] * y + D["g_z"][:, j] * z["W"]
                + D["g_z_tilde"][:, j] * z["Wt"] + D["g_gamma"][:, j] * gsum + D["g_u"][:, j] * vv[:, j])

    if basis is None or basis == traj.basis:
        feats, basis = traj.features, traj.basis
    else:
        feats = feature_path(fwd, basis)
    res = backward_sweep(feats, basis, dt, bwd.n_idx, np.zeros(P), driver,
                         {"W": bundle.dW, "Wt": bundle.dWt},
                         jumps=comp, nu=nu, drift={"Wt": fwd.dxi - bundle.dWt})
    g1 = res.gamma if res.gamma is not None else np.zeros((P, N, 0))
    return VariationalBundle(x1, res.y, res.z["W"], res.z["Wt"], g1, Z1, vv, res.y0_samples,
                             bwd.n_idx)


def weighted_l2(arr: np.ndarray, times: np.ndarray, beta: float, upto: Optional[int] = None,
                nu: Optional[np.ndarray] = None) -> float:
    """(E ∫ e^{-βt}|Φ|² dt)^{1/2} with left-point values; γ-like arrays are ν-weighted."""
    w = discount_weights(times, beta)
    k = w.shape[0] if upto is None else upto
    if arr.ndim == 3:
        sq = (arr[:, :k] ** 2) @ nu if arr.shape[2] else np.zeros((arr.shape[0], k))
    else:
        sq = arr[:, :k] ** 2
    return float(math.sqrt(max(float(np.mean(sq @ w[:k])), 0.0)))


@dataclass(frozen=True)
class RateTable:
    epsilons: tuple
    norms: dict
    remainder_norms: dict
    slopes: dict
    remainder_slopes: dict

    def rows(self) -> list:
        out = []
        for name, vals in self.norms.items():
            for eps, val in zip(self.epsilons, vals):
                out.append((eps, name, val, self.slopes[name]))
        for name, vals in self.remainder_norms.items():
            for eps, val in zip(self.epsilons, vals):
                out.append((eps, name + "_tilde", val, self.remainder_slopes[name]))
        return out


def _loglog_slope(eps, vals) -> float:
    eps = np.asarray(eps, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if np.any(vals <= 0):
        return math.nan
    return float(np.polyfit(np.log(eps), np.log(vals), 1)[0])


PHI_NAMES = ("x", "y", "z", "z_tilde", "gamma", "Z")


def _phi_arrays(traj: Trajectory) -> dict:
    return {"x": traj.fwd.x, "y": traj.bwd.y, "z": traj.bwd.z, "z_tilde": traj.bwd.z_tilde,
            "gamma": traj.bwd.gamma, "Z": traj.density.Z}


def perturbation_convergence(spec: ModelSpec, u_bar: ControlProcess, v: ControlProcess,
                             bundle: NoiseBundle, epsilons: Sequence[float],
                             n: Optional[float] = None, basis: RegressionBasis = RegressionBasis(),
                             beta2: Optional[float] = None,
                             measure: str = "P_transformed") -> RateTable:
    """Weighted norms of Φ^ε - Φ̄ and of Φ̃^ε = (Φ^ε - Φ̄)/ε - Φ₁ under common random numbers.

    All trajectories share the noise bundle and the reference regression design.
    """
    beta2 = spec.beta if beta2 is None else beta2
    bar = solve_trajectory(spec, u_bar, bundle, n, basis, measure)
    var = simulate_variational(spec, u_bar, v, bar, bundle, basis)
    ones = {"x": var.x1, "y": var.y1, "z": var.z1, "z_tilde": var.z_tilde1,
            "gamma": var.gamma1, "Z": var.Z1}
    base = _phi_arrays(bar)
    times = bundle.grid.times
    k = bar.bwd.n_idx
    nu = spec.marks.nu
    norms = {name: [] for name in PHI_NAMES}
    rems = {name: [] for name in PHI_NAMES}
    for eps in epsilons:
        tr = solve_trajectory(spec, u_bar.perturbed(v, eps), bundle, n, basis, measure,
                              features=bar.features)
        cur = _phi_arrays(tr)
        for name in PHI_NAMES:
            d = cur[name] - base[name]
            norms[name].append(weighted_l2(d, times, beta2, k, nu))
            rems[name].append(weighted_l2(d / eps - ones[name], times, beta2, k, nu))
    eps_t = tuple(float(e) for e in epsilons)
    return RateTable(eps_t, {k_: tuple(v_) for k_, v_ in norms.items()},
                     {k_: tuple(v_) for k_, v_ in rems.items()},
                     {k_: _loglog_slope(eps_t, v_) for k_, v_ in norms.items()},
                     {k_: _loglog_slope(eps_t, v_) for k_, v_ in rems.items()})


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr}


def variational_inequality_samples(spec: ModelSpec, traj: Trajectory, var: VariationalBundle,
                                   partials: Optional[BarPartials] = None) -> np.ndarray:
    """Per-path integrand of the first-order cost expansion (mean = LHS)."""
    D = partials if partials is not None else bar_partials(spec, traj)
    grid = traj.fwd.grid
    k = var.n_idx
    w = discount_weights(grid.times, spec.beta)[:k]
    Zb = traj.density.Z[:, :k]
    gsum = var.gamma1[:, :k] @ spec.marks.nu if var.gamma1.shape[2] else 0.0
    integrand = (Zb * (D["f_x"][:, :k] * var.x1[:, :k] + D["f_y"][:, :k] * var.y1[:, :k]
                       + D["f_z"][:, :k] * var.z1[:, :k] + D["f_z_tilde"][:, :k] * var.z_tilde1[:, :k]
                       + D["f_gamma"][:, :k] * gsum + D["f_u"][:, :k] * var.v[:, :k])
                 + D["f"][:, :k] * var.Z1[:, :k])
    y0 = traj.bwd.y[:, 0]
    phi_y = spec.partial("phi", "y", y0)
    return phi_y * var.y1_0_samples + integrand @ w


def variational_inequality_lhs(spec: ModelSpec, bundle: NoiseBundle, u_bar: ControlProcess,
                               v: ControlProcess, var: VariationalBundle, traj: Trajectory,
                               partials: Optional[BarPartials] = None) -> Estimate:
    s = variational_inequality_samples(spec, traj, var, partials)
    return Estimate(float(s.mean()), _se(s))


def difference_quotient(spec: ModelSpec, u_bar: ControlProcess, v: ControlProcess, epsilon: float,
                        bundle: NoiseBundle, n: Optional[float] = None,
                        basis: RegressionBasis = RegressionBasis(),
                        bar: Optional[Trajectory] = None,
                        form: str = "transformed_P") -> Estimate:
    """(J(ū+εv) - J(ū))/ε with common random numbers and a common regression design."""
    measure = "P_transformed" if form == "transformed_P" else "P_bar"
    bar = bar if bar is not None else solve_trajectory(spec, u_bar, bundle, n, basis, measure)
    pert = solve_trajectory(spec, u_bar.perturbed(v, epsilon), bundle, n, basis, measure,
                            features=bar.features)
    s0 = cost_samples(spec, bar.fwd, bar.bwd, bar.density, form)
    s1 = cost_samples(spec, pert.fwd, pert.bwd, pert.density, form)
    d = (s1 - s0) / epsilon
    return Estimate(float(d.mean()), _se(d))
