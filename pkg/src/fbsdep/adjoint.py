"""Adjoint equations, the Hamiltonian and the executable maximum condition."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .backward import RegressionBasis, backward_sweep, design_matrix, feature_path, regress
from .control import BarPartials, Trajectory, VariationalBundle, bar_partials
from .errors import BlowUp
from .forward import BLOWUP_THRESHOLD
from .model import ModelSpec, central_difference, discount_weights
from .noise import NoiseBundle

XI_BASIS = RegressionBasis(features=("xi", "xi_mean"))
QM_BASIS = RegressionBasis(features=("x", "xi"))


@dataclass(frozen=True, eq=False)
class AdjointBundle:
    p: np.ndarray
    Q: np.ndarray
    M_tilde: np.ndarray
    q: np.ndarray
    m: np.ndarray
    m_tilde: np.ndarray
    n: np.ndarray
    n_idx: int
    q_lookahead: Optional[np.ndarray] = None


@dataclass(frozen=True)
class HamiltonianInputs:
    t: object
    x: object
    y: object
    z: object
    z_tilde: object
    gamma_integral: object
    Z_density: object
    u: object
    p: object
    q: object
    m: object
    m_tilde: object
    n_marks: tuple
    M_tilde: object

    def replace_u(self, u) -> "HamiltonianInputs":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["u"] = u
        return HamiltonianInputs(**d)


def hamiltonian(inp: HamiltonianInputs, spec: ModelSpec):
    """g p + b̃ q + σ m + σ̃ m̃ + Σ_i l(e_i) n_i ν_i + e^{-βt/2} h M̃ 𝒵 + f 𝒵."""
    x, u, t = inp.x, inp.u, inp.t
    val = (spec.evaluate("g", x, inp.y, inp.z, inp.z_tilde, inp.gamma_integral, u, t) * inp.p
           + spec.evaluate("b_tilde", x, u, t) * inp.q
           + spec.evaluate("sigma", x, u, t) * inp.m
           + spec.evaluate("sigma_tilde", x, u, t) * inp.m_tilde
           + np.exp(-0.5 * spec.beta * np.asarray(t, dtype=float)) * spec.evaluate("h", x, u)
           * inp.M_tilde * inp.Z_density
           + spec.evaluate("f", x, inp.y, inp.z, inp.z_tilde, inp.gamma_integral, u) * inp.Z_density)
    for e, nu, n_i in zip(spec.marks.marks, spec.marks.intensities, inp.n_marks):
        val = val + spec.evaluate("l", x, u, e, t) * n_i * nu
    return val


def hamiltonian_u(inp: HamiltonianInputs, spec: ModelSpec):
    """∂H/∂u assembled from coefficient partials (analytic when registered)."""
    x, u, t = inp.x, inp.u, inp.t
    gargs = (x, inp.y, inp.z, inp.z_tilde, inp.gamma_integral, u, t)
    val = (spec.partial("g", "u", *gargs) * inp.p
           + spec.partial("b_tilde", "u", x, u, t) * inp.q
           + spec.partial("sigma", "u", x, u, t) * inp.m
           + spec.partial("sigma_tilde", "u", x, u, t) * inp.m_tilde
           + np.exp(-0.5 * spec.beta * np.asarray(t, dtype=float)) * spec.partial("h", "u", x, u)
           * inp.M_tilde * inp.Z_density
           + spec.partial("f", "u", *gargs[:-1]) * inp.Z_density)
    for e, nu, n_i in zip(spec.marks.marks, spec.marks.intensities, inp.n_marks):
        val = val + spec.partial("l", "u", x, u, e, t) * n_i * nu
    return val


def hamiltonian_u_fd(inp: HamiltonianInputs, spec: ModelSpec):
    """Central difference of :func:`hamiltonian` in u (relative step 1e-5)."""
    return central_difference(lambda uu: hamiltonian(inp.replace_u(uu), spec),
                              (np.asarray(inp.u, dtype=float),), 0)


def hamiltonian_adjoint_drivers(inp: HamiltonianInputs, spec: ModelSpec) -> dict:
    """Adjoint coefficients written through H-partials: the rewritten system.

    Each partial is assembled term by term from H's definition, one product
    rule per Hamiltonian term.
    """
    x, u, t = inp.x, inp.u, inp.t
    gargs = (x, inp.y, inp.z, inp.z_tilde, inp.gamma_integral, u, t)
    fargs = gargs[:-1]
    e = np.exp(-0.5 * spec.beta * np.asarray(t, dtype=float))
    Zd = inp.Z_density

    def H_wrt(wrt):
        # terms of H that involve the (y, z, z̃, γ) slots: g p and f 𝒵
        return spec.partial("g", wrt, *gargs) * inp.p + spec.partial("f", wrt, *fargs) * Zd

    H_x = (spec.partial("g", "x", *gargs) * inp.p + spec.partial("b_tilde", "x", x, u, t) * inp.q
           + spec.partial("sigma", "x", x, u, t) * inp.m
           + spec.partial("sigma_tilde", "x", x, u, t) * inp.m_tilde
           + e * spec.partial("h", "x", x, u) * inp.M_tilde * Zd
           + spec.partial("f", "x", *fargs) * Zd)
    for em, nu, n_i in zip(spec.marks.marks, spec.marks.intensities, inp.n_marks):
        H_x = H_x + spec.partial("l", "x", x, u, em, t) * n_i * nu
    H_Z = e * spec.evaluate("h", x, u) * inp.M_tilde + spec.evaluate("f", *fargs)
    return {
        "p_drift": H_wrt("y") + spec.beta * inp.p,
        "p_W": H_wrt("z"),
        "p_xi": H_wrt("z_tilde"),
        "p_jump": H_wrt("gamma"),
        "H_Z": H_Z,
        "q_driver_plus_beta_q": H_x,
    }


def raw_adjoint_drivers(inp: HamiltonianInputs, spec: ModelSpec) -> dict:
    """Adjoint coefficients exactly as written in the three adjoint equations."""
    x, u, t = inp.x, inp.u, inp.t
    gargs = (x, inp.y, inp.z, inp.z_tilde, inp.gamma_integral, u, t)
    fargs = gargs[:-1]
    e = np.exp(-0.5 * spec.beta * np.asarray(t, dtype=float))
    Zd = inp.Z_density
    f_bar = spec.evaluate("f", *fargs)
    h_bar = spec.evaluate("h", x, u)
    jump = 0.0
    for em, nu, n_i in zip(spec.marks.marks, spec.marks.intensities, inp.n_marks):
        jump = jump + spec.partial("l", "x", x, u, em, t) * n_i * nu
    q_drv = (Zd * spec.partial("f", "x", *fargs) + spec.partial("g", "x", *gargs) * inp.p
             + spec.partial("b_tilde", "x", x, u, t) * inp.q
             + spec.partial("sigma", "x", x, u, t) * inp.m
             + spec.partial("sigma_tilde", "x", x, u, t) * inp.m_tilde + jump
             + e * Zd * spec.partial("h", "x", x, u) * inp.M_tilde)
    return {
        "p_drift": Zd * spec.partial("f", "y", *fargs) + spec.partial("g", "y", *gargs) * inp.p
                   + spec.beta * inp.p,
        "p_W": Zd * spec.partial("f", "z", *fargs) + spec.partial("g", "z", *gargs) * inp.p,
        "p_xi": Zd * spec.partial("f", "z_tilde", *fargs) + spec.partial("g", "z_tilde", *gargs) * inp.p,
        "p_jump": Zd * spec.partial("f", "gamma", *fargs) + spec.partial("g", "gamma", *gargs) * inp.p,
        "H_Z": f_bar + e * h_bar * inp.M_tilde,
        "q_driver_plus_beta_q": q_drv,
    }


# ---------------------------------------------------------------------------
# solvers


def solve_adjoint_p(spec: ModelSpec, traj: Trajectory, bundle: NoiseBundle,
                    partials: Optional[BarPartials] = None) -> np.ndarray:
    """Forward Euler for p from p_0 = φ_y(ȳ_0)."""
    D = partials if partials is not None else bar_partials(spec, traj)
    fwd = traj.fwd
    grid = fwd.grid
    N, dt = grid.n_steps, grid.dt
    Zb = traj.density.Z
    p = np.empty((fwd.n_paths, N + 1))
    p[:, 0] = spec.partial("phi", "y", traj.bwd.y[:, 0])
    comp = bundle.compensated_increments() if spec.marks.size else None
    for j in range(N):
        pj = p[:, j]
        z = Zb[:, j]
        step = ((z * D["f_y"][:, j] + D["g_y"][:, j] * pj + spec.beta * pj) * dt
                + (z * D["f_z"][:, j] + D["g_z"][:, j] * pj) * bundle.dW[:, j]
                + (z * D["f_z_tilde"][:, j] + D["g_z_tilde"][:, j] * pj) * fwd.dxi[:, j])
        if comp is not None:
            step = step + (z * D["f_gamma"][:, j] + D["g_gamma"][:, j] * pj) * comp[:, j, :].sum(axis=1)
        p[:, j + 1] = pj + step
        bad = ~np.isfinite(p[:, j + 1]) | (np.abs(p[:, j + 1]) > BLOWUP_THRESHOLD)
        if bad.any():
            k = int(np.argmax(bad))
            raise BlowUp(f"|p| exceeded {BLOWUP_THRESHOLD:g} at step {j + 1}, path {k}", step=j + 1, path=k)
    return p


def solve_adjoint_QM(spec: ModelSpec, traj: Trajectory, bundle: NoiseBundle,
                     n: Optional[float] = None, basis: RegressionBasis = QM_BASIS,
                     partials: Optional[BarPartials] = None):
    """Zero-terminal sweep for -dQ = (f̄ + e^{-βt/2} h̄ M̃ - βQ)dt - M̃ dξ; returns (Q, M̃)."""
    D = partials if partials is not None else bar_partials(spec, traj)
    fwd = traj.fwd
    grid = fwd.grid
    n_idx = traj.bwd.n_idx if n is None else grid.index_of(n)
    feats = feature_path(fwd, basis)
    e = D["disc_half"]

    def driver(j, Q, z, gam):
        return D["f"][:, j] + e[:, j] * D["h"][:, j] * z["Wt"] - spec.beta * Q

    res = backward_sweep(feats, basis, grid.dt, n_idx, np.zeros(fwd.n_paths), driver,
                         {"Wt": bundle.dWt}, drift={"Wt": fwd.dxi - bundle.dWt})
    return res.y, res.z["Wt"]


def solve_adjoint_q(spec: ModelSpec, traj: Trajectory, p: np.ndarray, M_tilde: np.ndarray,
                    bundle: NoiseBundle, n: Optional[float] = None,
                    basis: Optional[RegressionBasis] = None,
                    partials: Optional[BarPartials] = None, lookahead: bool = False):
    """Zero-terminal sweep for (q, m, m̃, n) with the full linear driver.

    With ``lookahead`` the pathwise realised-future version of q is returned as
    a fifth element.
    """
    D = partials if partials is not None else bar_partials(spec, traj)
    fwd = traj.fwd
    grid = fwd.grid
    n_idx = traj.bwd.n_idx if n is None else grid.index_of(n)
    feats = traj.features if basis is None else feature_path(fwd, basis)
    basis = traj.basis if basis is None else basis
    Zb = traj.density.Z
    e = D["disc_half"]
    nu = spec.marks.nu
    m = spec.marks.size
    comp = bundle.compensated_increments() if m else None

    def driver(j, q, z, gam):
        val = (Zb[:, j] * D["f_x"][:, j] + D["g_x"][:, j] * p[:, j] + D["b_tilde_x"][:, j] * q
               + D["sigma_x"][:, j] * z["W"] + D["sigma_tilde_x"][:, j] * z["Wt"]
               - spec.beta * q + e[:, j] * Zb[:, j] * D["h_x"][:, j] * M_tilde[:, j])
        for i in range(m):
            val = val + D[f"l_x_{i}"][:, j] * gam[:, i] * nu[i]
        return val

    res = backward_sweep(feats, basis, grid.dt, n_idx, np.zeros(fwd.n_paths), driver,
                         {"W": bundle.dW, "Wt": bundle.dWt}, jumps=comp, nu=nu,
                         drift={"Wt": fwd.dxi - bundle.dWt})
    nn = res.gamma if res.gamma is not None else np.zeros((fwd.n_paths, grid.n_steps, 0))
    if lookahead:
        return res.y, res.z["W"], res.z["Wt"], nn, _lookahead(res, fwd, bundle, n_idx)
    return res.y, res.z["W"], res.z["Wt"], nn


def _lookahead(res, fwd, bundle, n_idx) -> np.ndarray:
    """Pathwise q̂_j = Σ_{i>=j} (driver_i dt - drift correction_i): the regressed
    conditional expectations replaced by realised future values.  E[q̂_j | F_j]
    equals q_j, so its spread measures the Monte Carlo error of q."""
    dt = fwd.grid.dt
    inc = res.driver_values[:, :n_idx] * dt - res.z["Wt"][:, :n_idx] * (fwd.dxi - bundle.dWt)[:, :n_idx]
    out = np.zeros_like(res.y)
    out[:, :n_idx] = np.cumsum(inc[:, ::-1], axis=1)[:, ::-1]
    return out


def solve_adjoints(spec: ModelSpec, traj: Trajectory, bundle: NoiseBundle,
                   basis_q: Optional[RegressionBasis] = None,
                   basis_QM: RegressionBasis = QM_BASIS,
                   partials: Optional[BarPartials] = None) -> AdjointBundle:
    """p, then (Q, M̃), then (q, m, m̃, n) along ``traj``."""
    D = partials if partials is not None else bar_partials(spec, traj)
    p = solve_adjoint_p(spec, traj, bundle, D)
    Q, Mt = solve_adjoint_QM(spec, traj, bundle, None, basis_QM, D)
    q, m, mt, nn, qh = solve_adjoint_q(spec, traj, p, Mt, bundle, None, basis_q, D, lookahead=True)
    return AdjointBundle(p, Q, Mt, q, m, mt, nn, traj.bwd.n_idx, qh)


# ---------------------------------------------------------------------------
# solvability conditions


@dataclass(frozen=True)
class Bounds:
    B_gy: float = 0.0
    B_gz: float = 0.0
    B_gz_tilde: float = 0.0
    B_ggamma: float = 0.0
    B_h: float = 0.0
    B_btilde_x: float = 0.0
    B_sigma_x: float = 0.0
    B_sigma_tilde_x: float = 0.0
    B_l_x: float = 0.0

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def estimate_bounds(spec: ModelSpec, traj: Trajectory, partials: Optional[BarPartials] = None) -> Bounds:
    """Bounds along the reference trajectory.  B_gy and B_b̃x are signed suprema
    (they enter linearly); the others are suprema of absolute values."""
    D = partials if partials is not None else bar_partials(spec, traj)
    k = traj.bwd.n_idx
    lx = np.zeros_like(D["g_x"][:, :k])
    for i, nu in enumerate(spec.marks.intensities):
        lx = lx + nu * D[f"l_x_{i}"][:, :k] ** 2
    hb = spec.h_bound if spec.h_bound is not None else float(np.max(np.abs(D["h"][:, :k])))
    return Bounds(
        B_gy=float(np.max(D["g_y"][:, :k])),
        B_gz=float(np.max(np.abs(D["g_z"][:, :k]))),
        B_gz_tilde=float(np.max(np.abs(D["g_z_tilde"][:, :k]))),
        B_ggamma=float(np.max(np.abs(D["g_gamma"][:, :k]))),
        B_h=float(hb),
        B_btilde_x=float(np.max(D["b_tilde_x"][:, :k])),
        B_sigma_x=float(np.max(np.abs(D["sigma_x"][:, :k]))),
        B_sigma_tilde_x=float(np.max(np.abs(D["sigma_tilde_x"][:, :k]))),
        B_l_x=float(np.sqrt(np.max(lx))) if lx.size else 0.0,
    )


@dataclass(frozen=True)
class SufficientConditionReport:
    lambda_min: float
    cond1_margin: float
    beta_sc: float
    beta: float
    margins: dict

    @property
    def passed(self) -> bool:
        return self.cond1_margin < 0

    @property
    def beta_consistent(self) -> bool:
        return abs(self.beta - self.beta_sc) <= 1e-9 * max(1.0, abs(self.beta))

    @property
    def conditions_pass(self) -> dict:
        return {k: v <= 0 if k.endswith("_i") else v < 0 for k, v in self.margins.items()}

    def to_dict(self) -> dict:
        return {"lambda_min": self.lambda_min, "cond1_margin": self.cond1_margin,
                "beta_sc": self.beta_sc, "beta": self.beta, "passed": self.passed,
                "beta_consistent": self.beta_consistent, "margins": dict(self.margins)}


def sufficient_condition_check(spec: ModelSpec, bounds: Bounds, mu1: Optional[float] = None,
                               mu2: Optional[float] = None, beta: Optional[float] = None
                               ) -> SufficientConditionReport:
    """Evaluate the sufficient solvability condition and the separate conditions
    for p, Q and q.  Margins are lhs - rhs, nonpositive (or negative) when met."""
    mu1 = spec.mu1 if mu1 is None else mu1
    mu2 = spec.mu2 if mu2 is None else mu2
    beta = spec.beta if beta is None else beta
    b = bounds
    gzz = b.B_gz ** 2 + b.B_gz_tilde ** 2 + b.B_ggamma ** 2
    lam = min(-2 * b.B_h ** 2 - gzz,
              -2 * b.B_sigma_x ** 2 - 2 * b.B_sigma_tilde_x ** 2 - 2 * b.B_l_x ** 2 - gzz)
    cond1 = mu1 + mu2 - 0.5 * lam
    beta_sc = 0.5 * (mu1 - mu2) + 0.5 * (b.B_btilde_x - b.B_gy)
    margins = {
        "p_i": 2 * mu1 + gzz - beta,
        "p_ii": beta + b.B_gy - mu1,
        "Q_i": -mu2 - beta,
        "Q_ii": beta + 2 * mu2 + 2 * b.B_h ** 2,
        "q_i": b.B_btilde_x - beta - mu2,
        "q_ii": beta + 2 * mu2 + 2 * b.B_sigma_x ** 2 + 2 * b.B_sigma_tilde_x ** 2 + 2 * b.B_l_x ** 2,
    }
    return SufficientConditionReport(float(lam), float(cond1), float(beta_sc), float(beta), margins)


# ---------------------------------------------------------------------------
# maximum condition, transversality, duality


def hamiltonian_u_paths(spec: ModelSpec, traj: Trajectory, adj: AdjointBundle,
                        partials: Optional[BarPartials] = None, lookahead: bool = False) -> np.ndarray:
    """Pathwise H̄_u on the left grid points, shape (paths, steps).  With
    ``lookahead`` q is replaced by its realised-future samples."""
    D = partials if partials is not None else bar_partials(spec, traj)
    N = traj.fwd.grid.n_steps
    Zb = traj.density.Z[:, :N]
    q = adj.q_lookahead if lookahead and adj.q_lookahead is not None else adj.q
    val = (D["g_u"] * adj.p[:, :N] + D["b_tilde_u"] * q[:, :N] + D["sigma_u"] * adj.m[:, :N]
           + D["sigma_tilde_u"] * adj.m_tilde[:, :N]
           + D["disc_half"] * D["h_u"] * adj.M_tilde[:, :N] * Zb + D["f_u"] * Zb)
    for i, nu in enumerate(spec.marks.intensities):
        val = val + D[f"l_u_{i}"] * adj.n[:, :, i] * nu
    return val


@dataclass(frozen=True)
class MaxConditionProfile:
    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    rms: np.ndarray
    violation_score: float

    def rows(self) -> list:
        return [(float(t), float(e), float(s)) for t, e, s in zip(self.times, self.estimate, self.stderr)]


def maximum_condition_test(spec: ModelSpec, traj: Trajectory, adj: AdjointBundle,
                           basis: RegressionBasis = XI_BASIS,
                           partials: Optional[BarPartials] = None,
                           upto: Optional[int] = None) -> MaxConditionProfile:
    """Regress pathwise H̄_u on observation features per slice, over the first
    half of the truncation horizon unless ``upto`` (a grid index) says otherwise.

    ``estimate`` is the mean of the fitted conditional expectation and ``rms``
    the root mean square of the fitted values, which also sees sign changes
    across paths.  ``stderr`` is computed from H̄_u with q replaced by its
    realised-future samples: same mean, but the spread then includes the
    Monte Carlo error of the backward sweep and not just the cross-section.
    """
    Hu = hamiltonian_u_paths(spec, traj, adj, partials, lookahead=True)
    fwd = traj.fwd
    feats = feature_path(fwd, basis)
    k = adj.n_idx // 2 if upto is None else upto
    P = Hu.shape[0]
    est = np.empty(k)
    se = np.empty(k)
    rms = np.empty(k)
    for j in range(k):
        fit = regress(design_matrix(basis, feats[:, j, :]), Hu[:, j], basis.ridge)
        est[j] = fit.mean()
        se[j] = Hu[:, j].std(ddof=1) / math.sqrt(P) if P > 1 else 0.0
        rms[j] = math.sqrt(float(np.mean(fit ** 2)))
    dt = fwd.grid.dt
    score = float(np.sum(np.maximum(0.0, -(est + 3 * se))) * dt)
    return MaxConditionProfile(fwd.grid.times[:k], est, se, rms, score)


@dataclass(frozen=True)
class TransversalitySeries:
    times: np.ndarray
    series: dict
    stderr: dict
    tail_ratio: dict
    fitted_rate: dict


def transversality_check(adj: AdjointBundle, var: VariationalBundle, beta: float, times: np.ndarray,
                         at_fraction: float = 0.9) -> TransversalitySeries:
    """E[e^{-βt} p y₁], E[e^{-βt} Q 𝒵₁], E[e^{-βt} q x₁] on the grid up to the horizon."""
    from .forward import fit_decay_rate
    k = adj.n_idx
    t = times[: k + 1]
    disc = np.exp(-beta * t)
    prods = {"p_y1": adj.p[:, : k + 1] * var.y1[:, : k + 1],
             "Q_Z1": adj.Q[:, : k + 1] * var.Z1[:, : k + 1],
             "q_x1": adj.q[:, : k + 1] * var.x1[:, : k + 1]}
    series, se, ratio, rate = {}, {}, {}, {}
    P = adj.p.shape[0]
    j_at = int(round(at_fraction * k))
    for name, arr in prods.items():
        s = arr * disc
        series[name] = s.mean(axis=0)
        se[name] = s.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.zeros(k + 1)
        peak = float(np.max(np.abs(series[name])))
        ratio[name] = abs(float(series[name][j_at])) / peak if peak > 0 else 0.0
        half = k // 2
        rate[name] = fit_decay_rate(t[half:j_at + 1], series[name][half:j_at + 1])
    return TransversalitySeries(t, series, se, ratio, rate)


@dataclass(frozen=True)
class DualityReport:
    residual: float
    stderr: float
    lhs_increment: float
    rhs_integral: float


def _duality_pieces(spec, traj, var, adj, k, D):
    grid = traj.fwd.grid
    t = grid.times
    disc = np.exp(-spec.beta * t)
    gamma_T = disc[k] * (-adj.p[:, k] * var.y1[:, k] + adj.Q[:, k] * var.Z1[:, k] + adj.q[:, k] * var.x1[:, k])
    gamma_0 = -adj.p[:, 0] * var.y1_0_samples
    Hu = hamiltonian_u_paths(spec, traj, adj, D)[:, :k]
    Zb = traj.density.Z[:, :k]
    gsum = var.gamma1[:, :k] @ spec.marks.nu if var.gamma1.shape[2] else 0.0
    integrand_I = (Zb * (D["f_x"][:, :k] * var.x1[:, :k] + D["f_y"][:, :k] * var.y1[:, :k]
                         + D["f_z"][:, :k] * var.z1[:, :k] + D["f_z_tilde"][:, :k] * var.z_tilde1[:, :k]
                         + D["f_gamma"][:, :k] * gsum + D["f_u"][:, :k] * var.v[:, :k])
                   + D["f"][:, :k] * var.Z1[:, :k])
    w = discount_weights(t, spec.beta)[:k]
    hv = (Hu * var.v[:, :k]) @ w
    ii = integrand_I @ w
    return gamma_T, gamma_0, hv, ii


def duality_residual(spec: ModelSpec, traj: Trajectory, var: VariationalBundle, adj: AdjointBundle,
                     window_T: float, partials: Optional[BarPartials] = None) -> DualityReport:
    """(E[Γ_T] - Γ_0) - E∫₀ᵀ e^{-βt}(H̄_u v - I_t) dt for Γ = e^{-βt}(-p y₁ + Q 𝒵₁ + q x₁),
    where I_t is the integrand of the first-order cost expansion."""
    D = partials if partials is not None else bar_partials(spec, traj)
    k = traj.fwd.grid.index_of(window_T)
    gT, g0, hv, ii = _duality_pieces(spec, traj, var, adj, k, D)
    s = (gT - g0) - (hv - ii)
    P = s.shape[0]
    return DualityReport(float(s.mean()), float(s.std(ddof=1) / math.sqrt(P)) if P > 1 else 0.0,
                         float((gT - g0).mean()), float((hv - ii).mean()))


def duality_reconciliation(spec: ModelSpec, traj: Trajectory, var: VariationalBundle,
                           adj: AdjointBundle, partials: Optional[BarPartials] = None):
    """LHS of the variational inequality minus (E∫e^{-βt}H̄_u v dt - E[Γ_n]); ≈ 0."""
    from .control import variational_inequality_samples
    D = partials if partials is not None else bar_partials(spec, traj)
    k = adj.n_idx
    gT, g0, hv, ii = _duality_pieces(spec, traj, var, adj, k, D)
    lhs = variational_inequality_samples(spec, traj, var, D)
    s = lhs - (hv - gT)
    P = s.shape[0]
    return float(s.mean()), float(s.std(ddof=1) / math.sqrt(P)) if P > 1 else 0.0
