"""Least-squares Monte Carlo solvers for the truncated infinite-horizon BSDEP.

The engine is :func:`backward_sweep`, a generic explicit backward scheme for
linear or nonlinear drivers: per time slice it regresses the next value and
its martingale-increment products on state features, reads off the
martingale integrands from the covariation identities, and applies the
driver with a short Picard correction.  The adjoint solvers reuse it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import InvalidDelta, NonConvergent, SingularRegression
from .forward import ForwardPath
from .model import ModelSpec, discount_weights, effective_lipschitz
from .noise import NoiseBundle

COND_LIMIT = 1e12
PICARD_TOL = 0.5
FEATURE_NAMES = ("x", "xi", "xi_mean")


@dataclass(frozen=True)
class RegressionBasis:
    kind: str = "polynomial"
    degree: int = 3
    bins: int = 16
    ridge: float = 1e-8
    features: tuple = ("x",)

    def __post_init__(self):
        if self.kind not in ("polynomial", "piecewise_constant_bins"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.degree < 0 or self.bins < 1 or self.ridge < 0:
            raise ValueError("degree >= 0, bins >= 1 and ridge >= 0 required")
        object.__setattr__(self, "features", tuple(self.features))
        for f in self.features:
            if f not in FEATURE_NAMES:
                raise ValueError(f"unknown feature {f!r}; choose from {FEATURE_NAMES}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "bins": self.bins,
                "ridge": self.ridge, "features": list(self.features)}


def feature_path(fwd: ForwardPath, basis: RegressionBasis) -> np.ndarray:
    """Stack the basis' state features into shape (paths, steps+1, n_features)."""
    cols = []
    for name in basis.features:
        if name == "x":
            cols.append(fwd.x)
        elif name == "xi":
            cols.append(fwd.xi)
        else:
            t = fwd.grid.times
            run = np.concatenate([np.zeros((fwd.n_paths, 1)),
                                  np.cumsum(fwd.xi[:, :-1] * fwd.grid.dt, axis=1)], axis=1)
            cols.append(np.where(t > 0, run / np.where(t > 0, t, 1.0), 0.0))
    return np.stack(cols, axis=-1)


def design_matrix(basis: RegressionBasis, feats: np.ndarray) -> np.ndarray:
    """Regression design for one slice; near-constant feature columns are dropped,
    so a deterministic slice reduces to the intercept."""
    feats = np.asarray(feats, dtype=float).reshape(feats.shape[0], -1)
    P = feats.shape[0]
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    keep = std > 1e-12 * (1.0 + np.abs(mean))
    s = (feats[:, keep] - mean[keep]) / std[keep]
    if basis.kind == "piecewise_constant_bins":
        if s.shape[1] == 0:
            return np.ones((P, 1))
        v = s[:, 0]
        edges = np.quantile(v, np.linspace(0, 1, basis.bins + 1)[1:-1])
        idx = np.searchsorted(edges, v, side="right")
        cols = [(idx == b).astype(float) for b in range(basis.bins)]
        cols = [c for c in cols if c.any()]
        return np.stack(cols, axis=1)
    cols = [np.ones(P)]
    nf = s.shape[1]
    for d in range(1, basis.degree + 1):
        for combo in itertools.combinations_with_replacement(range(nf), d):
            cols.append(np.prod(s[:, combo], axis=1))
    return np.stack(cols, axis=1)


def regress(design: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    """Ridge least squares; returns fitted values with the targets' shape."""
    P = design.shape[0]
    T = targets.reshape(P, -1)
    A = design.T @ design / P
    A[np.diag_indices_from(A)] += ridge
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularRegression(f"normal matrix condition number {cond:.3g} exceeds {COND_LIMIT:g}")
    coef = np.linalg.solve(A, design.T @ T / P)
    return (design @ coef).reshape(targets.shape)


@dataclass(frozen=True, eq=False)
class SweepResult:
    y: np.ndarray
    z: dict
    gamma: Optional[np.ndarray]
    driver_values: np.ndarray
    y0_samples: np.ndarray


def backward_sweep(features: np.ndarray, basis: RegressionBasis, dt: float, n_idx: int,
                   terminal: np.ndarray, driver: Callable,
                   martingales: Mapping[str, np.ndarray],
                   jumps: Optional[np.ndarray] = None, nu: Optional[np.ndarray] = None,
                   drift: Optional[Mapping[str, np.ndarray]] = None,
                   tail: Optional[np.ndarray] = None, picard: int = 1) -> SweepResult:
    """Explicit regression scheme on the grid indices ``0..n_idx``.

    ``driver(j, y, z, gamma)`` returns the generator at slice ``j`` where ``z``
    maps martingale names to integrand arrays and ``gamma`` has shape
    (paths, marks).  ``drift[name]`` is the F_j-measurable drift of that
    driving increment, subtracted as ``-z[name] * drift`` so the scheme is
    exact in conditional mean.  Indices after ``n_idx`` take ``tail`` (zero by
    default) with vanishing integrands.
    """
    P, N1, _ = features.shape
    N = N1 - 1
    m = 0 if jumps is None else jumps.shape[2]
    y = np.zeros((P, N1))
    zs = {k: np.zeros((P, N1)) for k in martingales}
    gam = np.zeros((P, N, m)) if m else None
    gvals = np.zeros((P, N))
    y[:, n_idx] = terminal
    if tail is not None and n_idx < N:
        y[:, n_idx + 1:] = np.asarray(tail).reshape(P, -1)
    acc = np.array(terminal, dtype=float, copy=True)
    names = list(martingales)
    for j in range(n_idx - 1, -1, -1):
        nxt = y[:, j + 1]
        design = design_matrix(basis, features[:, j, :])
        py = regress(design, nxt, basis.ridge)
        # increments are mean zero, so centring by E_j[y] is exact and cuts variance
        centred = nxt - py
        targets = [centred * martingales[k][:, j] / dt for k in names]
        if m:
            targets += [centred * jumps[:, j, i] / (nu[i] * dt) for i in range(m)]
        if targets:
            fitted = regress(design, np.stack(targets, axis=1), basis.ridge)
        else:
            fitted = np.zeros((P, 0))
        z = {k: fitted[:, a] for a, k in enumerate(names)}
        g_j = fitted[:, len(names):] if m else None
        correction = np.zeros(P)
        if drift:
            for k, d in drift.items():
                correction = correction + z[k] * d[:, j]
        cur = py + driver(j, py, z, g_j) * dt - correction
        # the correction relative to the explicit step estimates L_y dt
        scale = max(float(np.max(np.abs(cur))), float(np.max(np.abs(cur - py + correction))), 1e-12)
        for _ in range(picard):
            g = driver(j, cur, z, g_j)
            new = py + g * dt - correction
            delta = float(np.max(np.abs(new - cur)))
            if delta > PICARD_TOL * scale:
                raise NonConvergent(f"Picard correction changed y by {delta:.3g} at slice {j}")
            cur = new
        if picard == 0:
            g = driver(j, py, z, g_j)
        y[:, j] = cur
        for k in names:
            zs[k][:, j] = z[k]
        if m:
            gam[:, j, :] = g_j
        gvals[:, j] = g
        acc += (g - correction / dt) * dt
    return SweepResult(y, zs, gam, gvals, acc)


@dataclass(frozen=True, eq=False)
class BackwardSolution:
    y: np.ndarray
    z: np.ndarray
    z_tilde: np.ndarray
    gamma: np.ndarray
    horizon_n: float
    scheme: str
    n_idx: int
    grid: object
    nu: np.ndarray
    g_values: np.ndarray
    y0_samples: np.ndarray

    @property
    def y0(self) -> float:
        return float(self.y0_samples.mean())

    @property
    def y0_stderr(self) -> float:
        s = self.y0_samples
        return float(s.std(ddof=1) / math.sqrt(s.shape[0])) if s.shape[0] > 1 else 0.0

    def gamma_integral(self) -> np.ndarray:
        """Σ_i γ_i ν_i on left grid points, shape (paths, steps)."""
        if self.gamma.shape[2] == 0:
            return np.zeros(self.gamma.shape[:2])
        return self.gamma @ self.nu


def generator_driver(spec: ModelSpec, fwd: ForwardPath, g: Optional[Callable] = None) -> Callable:
    """Wrap a generator ``g(x, y, z, z_tilde, gamma_integral, u, t)`` for the sweep."""
    gen = g if g is not None else spec.generator_g
    times = fwd.grid.times
    nu = spec.marks.nu

    def driver(j, y, z, gam):
        gi = gam @ nu if gam is not None else 0.0
        return np.broadcast_to(np.asarray(gen(fwd.x[:, j], y, z["W"], z["Wt"], gi, fwd.u[:, j], times[j]),
                                          dtype=float), y.shape)
    return driver


def _solve(spec, fwd, bundle, n, basis, terminal, tail, scheme, picard, features, generator):
    grid = fwd.grid
    if n > grid.horizon + 1e-12:
        raise ValueError(f"horizon n={n} exceeds simulated horizon {grid.horizon}")
    n_idx = grid.index_of(n)
    feats = features if features is not None else feature_path(fwd, basis)
    jumps = bundle.compensated_increments() if spec.marks.size else None
    res = backward_sweep(feats, basis, grid.dt, n_idx, terminal,
                         generator_driver(spec, fwd, generator),
                         {"W": bundle.dW, "Wt": bundle.dWt},
                         jumps=jumps, nu=spec.marks.nu,
                         drift={"Wt": fwd.dxi - bundle.dWt}, tail=tail, picard=picard)
    gamma = res.gamma if res.gamma is not None else np.zeros((fwd.n_paths, grid.n_steps, 0))
    return BackwardSolution(res.y, res.z["W"], res.z["Wt"], gamma, float(n), scheme, n_idx, grid,
                            spec.marks.nu, res.driver_values, res.y0_samples)


def solve_bsdep_zero_terminal(spec: ModelSpec, fwd: ForwardPath, bundle: NoiseBundle, n: float,
                              basis: RegressionBasis = RegressionBasis(), picard: int = 1,
                              features: Optional[np.ndarray] = None,
                              generator: Optional[Callable] = None) -> BackwardSolution:
    """Scheme A: y_n = 0 and (y, z, z̃, γ) ≡ 0 after n."""
    return _solve(spec, fwd, bundle, n, basis, np.zeros(fwd.n_paths), None, "ZeroTerminal",
                  picard, features, generator)


def solve_bsdep_conditional_terminal(spec: ModelSpec, fwd: ForwardPath, bundle: NoiseBundle,
                                     n: float, zeta: Callable,
                                     basis: RegressionBasis = RegressionBasis(), picard: int = 1,
                                     features: Optional[np.ndarray] = None,
                                     generator: Optional[Callable] = None) -> BackwardSolution:
    """Scheme B: y_n = E[ζ | F_n] by regression; after n, y_t = ζ.

    ``zeta(fwd, n_idx)`` returns per-path samples of the terminal variable.
    """
    n_idx = fwd.grid.index_of(n)
    z = np.asarray(zeta(fwd, n_idx), dtype=float)
    z = np.broadcast_to(z, (fwd.n_paths,)).astype(float)
    if not np.all(np.isfinite(z)):
        raise ValueError("zeta samples must be finite")
    feats = features if features is not None else feature_path(fwd, basis)
    terminal = regress(design_matrix(basis, feats[:, n_idx, :]), z, basis.ridge)
    N = fwd.grid.n_steps
    tail = np.repeat(z[:, None], N - n_idx, axis=1) if n_idx < N else None
    return _solve(spec, fwd, bundle, n, basis, terminal, tail, "ConditionalTerminal",
                  picard, feats, generator)


def _se(s):
    return float(s.std(ddof=1) / math.sqrt(s.shape[0])) if s.shape[0] > 1 else 0.0


@dataclass(frozen=True)
class GapReport:
    sup_weighted_y_gap: float
    integral_y_gap: float
    integral_z_gap: float
    integral_z_tilde_gap: float
    integral_gamma_gap: float
    scale: float

    @property
    def total(self) -> float:
        return (self.sup_weighted_y_gap + self.integral_z_gap + self.integral_z_tilde_gap
                + self.integral_gamma_gap)

    def to_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in
             ("sup_weighted_y_gap", "integral_y_gap", "integral_z_gap", "integral_z_tilde_gap",
              "integral_gamma_gap", "scale")}
        d["total"] = self.total
        return d


def _weighted_gaps(a: BackwardSolution, b: BackwardSolution, beta: float, upto_idx: int) -> GapReport:
    grid = a.grid
    t = grid.times[: upto_idx + 1]
    w = discount_weights(grid.times, beta)[:upto_idx]
    dy = a.y[:, : upto_idx + 1] - b.y[:, : upto_idx + 1]
    sup_y = float(np.max(np.mean(dy ** 2, axis=0) * np.exp(-beta * t)))

    def integ(arr):
        return float(np.mean(arr[:, :upto_idx] @ w))

    dg = a.gamma[:, :upto_idx] - b.gamma[:, :upto_idx]
    ggap = float(np.mean((dg ** 2 @ a.nu) @ w)) if dg.shape[2] else 0.0
    scale = float(np.max(np.mean(b.y[:, : upto_idx + 1] ** 2, axis=0) * np.exp(-beta * t)))
    return GapReport(sup_y, integ(dy ** 2), integ((a.z - b.z)[:, : upto_idx] ** 2),
                     integ((a.z_tilde - b.z_tilde)[:, : upto_idx] ** 2), ggap, scale)


def truncation_gap(solA: BackwardSolution, solB: BackwardSolution, beta: float) -> GapReport:
    """Weighted distance between solutions at horizons n <= m over [0, m]."""
    if solA.grid != solB.grid:
        raise ValueError("solutions must share a grid")
    if solA.scheme != solB.scheme:
        raise ValueError("solutions must use the same scheme")
    if solA.horizon_n > solB.horizon_n:
        solA, solB = solB, solA
    return _weighted_gaps(solA, solB, beta, solB.n_idx)


@dataclass(frozen=True)
class SchemeGap:
    n: float
    gap: GapReport

    @property
    def value(self) -> float:
        return self.gap.total


def compare_schemes(spec: ModelSpec, fwd: ForwardPath, bundle: NoiseBundle, n: float,
                    zeta: Callable, basis: RegressionBasis = RegressionBasis(),
                    beta: Optional[float] = None) -> SchemeGap:
    """Weighted gap between the zero-terminal and conditional-terminal solutions on [0, n]."""
    beta = spec.beta if beta is None else beta
    a = solve_bsdep_zero_terminal(spec, fwd, bundle, n, basis)
    b = solve_bsdep_conditional_terminal(spec, fwd, bundle, n, zeta, basis)
    return SchemeGap(float(n), _weighted_gaps(a, b, beta, a.n_idx))


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    lhs_stderr: float
    rhs_stderr: float
    slack: float
    slack_stderr: float
    delta: float

    @property
    def holds(self) -> bool:
        return self.slack >= -3 * self.slack_stderr

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("lhs", "rhs", "lhs_stderr", "rhs_stderr", "slack", "slack_stderr", "delta")}


def stability_prefactor(spec: ModelSpec, delta: float, t: float = 0.0) -> float:
    k = effective_lipschitz(spec, t)
    return -spec.beta - 2 * spec.mu2 - 2 * (k["K1"] ** 2 + k["K2"] ** 2 + k["K3"] ** 2) - delta


def backward_stability(spec1: ModelSpec, spec2: ModelSpec, fwd: ForwardPath, bundle: NoiseBundle,
                       delta: float, n: Optional[float] = None,
                       basis: RegressionBasis = RegressionBasis()) -> StabilityReport:
    """Both sides of the generator-perturbation estimate for zero-terminal solutions.

    Constants (μ₂, K_i) are those of ``spec1``; the generator difference is
    evaluated along the second solution.
    """
    if delta <= 0 or stability_prefactor(spec1, delta) <= 0:
        raise InvalidDelta(f"delta={delta} leaves a nonpositive prefactor "
                           f"{stability_prefactor(spec1, delta):.6g}")
    n = fwd.grid.horizon if n is None else n
    s1 = solve_bsdep_zero_terminal(spec1, fwd, bundle, n, basis)
    s2 = solve_bsdep_zero_terminal(spec2, fwd, bundle, n, basis)
    grid = fwd.grid
    k = s1.n_idx
    t = grid.times[:k]
    w = discount_weights(grid.times, spec1.beta)[:k]
    pref = np.array([stability_prefactor(spec1, delta, tt) for tt in t])
    dy = (s1.y - s2.y)[:, :k]
    dz = (s1.z - s2.z)[:, :k]
    dzt = (s1.z_tilde - s2.z_tilde)[:, :k]
    dg = (s1.gamma - s2.gamma)[:, :k]
    gnorm = dg ** 2 @ spec1.marks.nu if dg.shape[2] else np.zeros_like(dy)
    lhs_s = (0.5 * (dz ** 2 + dzt ** 2 + gnorm) + pref * dy ** 2) @ w
    x = fwd.x[:, :k]
    u = fwd.u[:, :k]
    gi = s2.gamma_integral()[:, :k]
    diff = (spec1.evaluate("g", x, s2.y[:, :k], s2.z[:, :k], s2.z_tilde[:, :k], gi, u, t)
            - spec2.evaluate("g", x, s2.y[:, :k], s2.z[:, :k], s2.z_tilde[:, :k], gi, u, t))
    rhs_s = (diff ** 2 @ w) / delta
    sl = rhs_s - lhs_s
    return StabilityReport(float(lhs_s.mean()), float(rhs_s.mean()), _se(lhs_s), _se(rhs_s),
                           float(sl.mean()), _se(sl), float(delta))


def residual_on_window(sol: BackwardSolution, spec: ModelSpec, fwd: ForwardPath,
                       bundle: NoiseBundle, window_T: float, return_stderr: bool = False):
    """Mean over paths of |y_0 - y_T - ∫g dt + ∫z dW + ∫z̃ dξ + ∫γ dÑ| on [0, window_T]."""
    k = fwd.grid.index_of(window_T)
    if k == 0:
        return (0.0, 0.0) if return_stderr else 0.0
    dt = fwd.grid.dt
    t = fwd.grid.times[:k]
    gi = sol.gamma_integral()[:, :k]
    g = spec.evaluate("g", fwd.x[:, :k], sol.y[:, :k], sol.z[:, :k], sol.z_tilde[:, :k], gi,
                      fwd.u[:, :k], t)
    mart = (np.sum(sol.z[:, :k] * bundle.dW[:, :k], axis=1)
            + np.sum(sol.z_tilde[:, :k] * fwd.dxi[:, :k], axis=1))
    if sol.gamma.shape[2]:
        mart = mart + np.einsum("pji,pji->p", sol.gamma[:, :k], bundle.compensated_increments()[:, :k])
    r = np.abs(sol.y[:, 0] - sol.y[:, k] - g.sum(axis=1) * dt + mart)
    return (float(r.mean()), _se(r)) if return_stderr else float(r.mean())


@dataclass(frozen=True)
class NEstimate:
    lhs: float
    rhs: float
    diff: float
    diff_stderr: float
    k: int

    @property
    def holds(self) -> bool:
        return self.diff >= -3 * self.diff_stderr


def estimate_for_N_check(gamma: np.ndarray, bundle: NoiseBundle, beta: float, k: int = 2) -> NEstimate:
    """E(∫∫e^{-βt}γ²ν de dt)^k against E(∫∫e^{-βt}γ²N(de,dt))^k for predictable γ
    of shape (paths, steps, marks)."""
    grid = bundle.grid
    disc = np.exp(-beta * grid.times[:-1])
    g2 = gamma ** 2 * disc[None, :, None]
    a = np.einsum("pji,i->p", g2, bundle.marks.nu) * grid.dt
    b = np.einsum("pji,pji->p", g2, bundle.jump_counts)
    d = b ** k - a ** k
    return NEstimate(float(np.mean(a ** k)), float(np.mean(b ** k)), float(d.mean()), _se(d), k)
