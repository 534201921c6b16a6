"""Euler simulation of the controlled forward state and its moment estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BlowUp, InvalidEpsilon
from .model import DiscountProfile, ModelSpec, discount_weights
from .noise import STREAM_X0, NoiseBundle, path_generator

MEASURES = ("P_bar", "P_transformed")
BLOWUP_THRESHOLD = 1e12


@dataclass(frozen=True, eq=False)
class ForwardPath:
    """Simulated state.  ``u`` and ``dxi`` live on the left grid points, so they
    have one column fewer than ``x`` and ``xi``."""

    x: np.ndarray
    u: np.ndarray
    dxi: np.ndarray
    xi: np.ndarray
    measure: str
    bundle: NoiseBundle
    spec_name: str
    control: object = None

    @property
    def grid(self):
        return self.bundle.grid

    @property
    def seed(self) -> int:
        return self.bundle.seed

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]


def initial_states(spec: ModelSpec, bundle: NoiseBundle) -> np.ndarray:
    if not callable(spec.x0):
        return np.full(bundle.n_paths, float(spec.x0))
    return np.array([float(np.asarray(spec.x0(1, path_generator(bundle.seed, STREAM_X0, p))).ravel()[0])
                     for p in range(bundle.n_paths)])


def xi_features(xi_now: np.ndarray, xi_running_sum: np.ndarray, t: float) -> dict:
    """Observation statistics a partially observed control may consume."""
    mean = xi_running_sum / t if t > 0 else np.zeros_like(xi_now)
    return {"xi": xi_now, "xi_mean": mean}


def simulate_forward(spec: ModelSpec, control, bundle: NoiseBundle,
                     measure: str = "P_transformed") -> ForwardPath:
    """Euler scheme with left-limit jump evaluation.

    Under ``P_transformed`` the observation increment is the Brownian increment
    of W̃; under ``P_bar`` it carries the drift e^{-βt/2} h dt.  Either way the
    state uses b̃ and σ̃ dξ, which under ``P_bar`` reduces to b dt + σ̃ dW̃.
    """
    if measure not in MEASURES:
        raise ValueError(f"measure must be one of {MEASURES}")
    grid = bundle.grid
    n, dt = grid.n_steps, grid.dt
    times = grid.times
    P = bundle.n_paths
    # time-major work arrays keep each step's slice contiguous
    x = np.empty((n + 1, P))
    u = np.empty((n, P))
    dxi = np.empty((n, P))
    xi = np.zeros((n + 1, P))
    dW = np.ascontiguousarray(bundle.dW.T)
    dWt = np.ascontiguousarray(bundle.dWt.T)
    x[0] = initial_states(spec, bundle)
    xi_sum = np.zeros(P)
    comp = np.ascontiguousarray(bundle.compensated_increments().transpose(1, 0, 2)) if spec.marks.size else None
    marks = spec.marks.marks
    for j in range(n):
        t = times[j]
        xj = x[j]
        uj = np.asarray(control.evaluate(t, xj, xi_features(xi[j], xi_sum, t)), dtype=float)
        uj = np.broadcast_to(uj, (P,))
        u[j] = uj
        d = dWt[j]
        if measure == "P_bar":
            d = d + math.exp(-0.5 * spec.beta * t) * spec.evaluate("h", xj, uj) * dt
        dxi[j] = d
        step = (spec.evaluate("b_tilde", xj, uj, t) * dt
                + spec.evaluate("sigma", xj, uj, t) * dW[j]
                + spec.evaluate("sigma_tilde", xj, uj, t) * d)
        for i, e in enumerate(marks):
            step = step + spec.evaluate("l", xj, uj, e, t) * comp[j, :, i]
        x[j + 1] = xj + step
        xi_sum += xi[j] * dt
        xi[j + 1] = xi[j] + d
        bad = ~np.isfinite(x[j + 1]) | (np.abs(x[j + 1]) > BLOWUP_THRESHOLD)
        if bad.any():
            p = int(np.argmax(bad))
            raise BlowUp(f"|x| exceeded {BLOWUP_THRESHOLD:g} at step {j + 1}, path {p}",
                         step=j + 1, path=p)
    x, u, dxi, xi = (np.ascontiguousarray(a.T) for a in (x, u, dxi, xi))
    return ForwardPath(x, u, dxi, xi, measure, bundle, spec.name, control)


def _stderr(samples: np.ndarray) -> float:
    n = samples.shape[0]
    return float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0


@dataclass(frozen=True)
class WeightedMoment:
    kind: str
    beta: float
    k: int
    value: float
    stderr: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": self.beta, "k": self.k,
                "value": self.value, "stderr": self.stderr}


def weighted_moment(path, beta: float, k: int = 1, kind: str = "integral",
                    values: Optional[np.ndarray] = None) -> WeightedMoment:
    """Weighted 2k-th moments of a process on the grid (default: the state).

    ``sup_of_mean``: sup_t E[e^{-βkt}|x_t|^{2k}];
    ``mean_of_sup``: E[sup_t e^{-βkt}|x_t|^{2k}];
    ``integral``:    E ∫ e^{-βkt}|x_t|^{2k} dt over the truncated horizon.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = path.x if values is None else np.asarray(values, dtype=float)
    times = path.grid.times[: x.shape[1]]
    w = np.exp(-beta * k * times)
    powx = np.abs(x) ** (2 * k)
    if kind == "sup_of_mean":
        means = (powx * w).mean(axis=0)
        j = int(np.argmax(means))
        return WeightedMoment(kind, beta, k, float(means[j]), _stderr(powx[:, j] * w[j]))
    if kind == "mean_of_sup":
        s = (powx * w).max(axis=1)
        return WeightedMoment(kind, beta, k, float(s.mean()), _stderr(s))
    if kind == "integral":
        qw = discount_weights(path.grid.times, beta * k)[: x.shape[1]]
        m = min(qw.shape[0], powx.shape[1])
        s = powx[:, :m] @ qw[:m]
        return WeightedMoment(kind, beta, k, float(s.mean()), _stderr(s))
    raise ValueError(f"unknown moment kind {kind!r}")


@dataclass(frozen=True)
class DecaySeries:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    fitted_rate: float

    @property
    def decaying(self) -> bool:
        return self.fitted_rate > 0


def fit_decay_rate(times: np.ndarray, values: np.ndarray) -> float:
    """Least-squares rate r in values ≈ A e^{-r t}; +inf for an identically zero series."""
    v = np.abs(np.asarray(values, dtype=float))
    keep = v > 1e-300
    if not keep.any():
        return math.inf
    if keep.sum() < 2:
        return math.nan
    slope = np.polyfit(np.asarray(times)[keep], np.log(v[keep]), 1)[0]
    return float(-slope)


def check_decay(path, beta: float, tail_fraction: float = 0.5) -> DecaySeries:
    """Series E[e^{-βt} x_t^2] on the grid with a decay rate fitted over the tail."""
    times = path.grid.times
    s = np.exp(-beta * times) * path.x ** 2
    vals = s.mean(axis=0)
    se = s.std(axis=0, ddof=1) / math.sqrt(s.shape[0]) if s.shape[0] > 1 else np.zeros_like(vals)
    start = int((1 - tail_fraction) * (len(times) - 1))
    return DecaySeries(times, vals, se, fit_decay_rate(times[start:], vals[start:]))


def _l_norm_sq(spec: ModelSpec, fn, x, u, t):
    """Σ_i ν_i fn(e_i)^2 for the mark-indexed closure ``fn(e)``."""
    out = np.zeros_like(np.asarray(x, dtype=float))
    for e, nu in zip(spec.marks.marks, spec.marks.intensities):
        out = out + nu * fn(e) ** 2
    return out


def est_prefactor(spec: ModelSpec, epsilon: float) -> float:
    L = spec.lipschitz
    return (spec.beta - 2 * spec.mu1 - 3 * epsilon - L.L_sigma ** 2 - L.L_sigma_tilde ** 2
            - L.L_l ** 2 - epsilon * L.L_l ** 2)


@dataclass(frozen=True)
class AprioriGap:
    lhs: float
    rhs: float
    lhs_stderr: float
    rhs_stderr: float
    slack: float
    slack_stderr: float
    prefactor: float

    @property
    def holds(self) -> bool:
        return self.slack >= -3 * self.slack_stderr

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("lhs", "rhs", "lhs_stderr", "rhs_stderr", "slack", "slack_stderr", "prefactor")}


def _gap_from_samples(lhs_s, rhs_s, pref) -> AprioriGap:
    sl = rhs_s - lhs_s
    return AprioriGap(float(lhs_s.mean()), float(rhs_s.mean()), _stderr(lhs_s), _stderr(rhs_s),
                      float(sl.mean()), _stderr(sl), pref)


def forward_apriori_bound(spec: ModelSpec, control, bundle: NoiseBundle, epsilon: float,
                          measure: str = "P_transformed",
                          path: Optional[ForwardPath] = None) -> AprioriGap:
    """Both sides of the single-solution weighted L² estimate, per path."""
    pref = est_prefactor(spec, epsilon)
    if epsilon <= 0 or pref <= 0:
        raise InvalidEpsilon(f"prefactor {pref:.6g} must be positive (epsilon={epsilon})")
    fwd = path if path is not None else simulate_forward(spec, control, bundle, measure)
    L = spec.lipschitz
    t = fwd.grid.times[:-1]
    w = discount_weights(fwd.grid.times, spec.beta)
    zero = np.zeros_like(fwd.u)
    integrand = (spec.evaluate("b_tilde", zero, fwd.u, t) ** 2 / epsilon
                 + (L.L_sigma ** 2 / epsilon + 1) * spec.evaluate("sigma", zero, fwd.u, t) ** 2
                 + (L.L_sigma_tilde ** 2 / epsilon + 1) * spec.evaluate("sigma_tilde", zero, fwd.u, t) ** 2
                 + (1 + 1 / epsilon) * _l_norm_sq(spec, lambda e: spec.evaluate("l", zero, fwd.u, e, t),
                                                  zero, fwd.u, t))
    rhs_s = fwd.x[:, 0] ** 2 + integrand @ w
    lhs_s = pref * (fwd.x[:, :-1] ** 2 @ w)
    return _gap_from_samples(lhs_s, rhs_s, pref)


def forward_apriori_gap(spec1: ModelSpec, spec2: ModelSpec, bundle: NoiseBundle, epsilon: float,
                        control, measure: str = "P_transformed") -> AprioriGap:
    """Both sides of the two-solution a-priori estimate on a shared bundle.

    Constants (μ₁, Lipschitz bounds) come from ``spec1``; the coefficient
    differences are evaluated along the second solution.
    """
    if spec1.beta != spec2.beta:
        raise ValueError("specs must share beta")
    pref = est_prefactor(spec1, epsilon)
    if epsilon <= 0 or pref <= 0:
        raise InvalidEpsilon(f"prefactor {pref:.6g} must be positive (epsilon={epsilon})")
    f1 = simulate_forward(spec1, control, bundle, measure)
    f2 = simulate_forward(spec2, control, bundle, measure)
    L = spec1.lipschitz
    t = f2.grid.times[:-1]
    w = discount_weights(f2.grid.times, spec1.beta)
    x2, u2 = f2.x[:, :-1], f2.u

    def diff(name):
        return spec1.evaluate(name, x2, u2, t) - spec2.evaluate(name, x2, u2, t)

    ldiff = np.zeros_like(x2)
    for e, nu in zip(spec1.marks.marks, spec1.marks.intensities):
        ldiff = ldiff + nu * (spec1.evaluate("l", x2, u2, e, t) - spec2.evaluate("l", x2, u2, e, t)) ** 2
    integrand = (diff("b_tilde") ** 2 / epsilon
                 + (L.L_sigma ** 2 / epsilon + 1) * diff("sigma") ** 2
                 + (L.L_sigma_tilde ** 2 / epsilon + 1) * diff("sigma_tilde") ** 2
                 + (1 + 1 / epsilon) * ldiff)
    rhs_s = (f1.x[:, 0] - f2.x[:, 0]) ** 2 + integrand @ w
    lhs_s = pref * ((f1.x[:, :-1] - x2) ** 2 @ w)
    return _gap_from_samples(lhs_s, rhs_s, pref)


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    lhs_stderr: float
    rhs: float
    ratio: float
    k: int
    terms: dict

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "lhs_stderr": self.lhs_stderr, "rhs": self.rhs,
                "ratio": self.ratio, "k": self.k, "terms": dict(self.terms)}


def highorder_bound_check(path: ForwardPath, control, spec: ModelSpec, profile: DiscountProfile,
                          k: int = 1, C_k: float = 1.0) -> BoundReport:
    """sup_t E[e^{-β₂kt}|x_t|^{2k}] against the bracketed data statistic times ``C_k``."""
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    lhs = weighted_moment(path, profile.beta2, k, "sup_of_mean")
    times = path.grid.times
    t = times[:-1]
    w5 = discount_weights(times, profile.beta5)
    w5k = discount_weights(times, profile.beta5 * k)
    w1k = discount_weights(times, profile.beta1 * k)
    z = np.zeros_like(t)
    b0 = np.abs(spec.evaluate("b_tilde", z, z, t))
    s0 = np.abs(spec.evaluate("sigma", z, z, t))
    st0 = np.abs(spec.evaluate("sigma_tilde", z, z, t))
    l2k = np.zeros_like(t)
    for e, nu in zip(spec.marks.marks, spec.marks.intensities):
        l2k = l2k + nu * np.abs(spec.evaluate("l", z, z, e, t)) ** (2 * k)
    terms = {
        "x0": float(np.mean(np.abs(path.x[:, 0]) ** (2 * k))),
        "control": float(np.mean(np.abs(path.u) ** (2 * k) @ w1k)),
        "b_tilde0": float((b0 @ w5) ** (2 * k)),
        "sigma0": float((s0 ** 2 @ w5) ** k),
        "sigma_tilde0": float((st0 ** 2 @ w5) ** k),
        "l0": float((l2k ** (1.0 / (2 * k)) @ w5) ** (2 * k)),
        "l0_integral": float(l2k @ w5k),
    }
    rhs = C_k * sum(terms.values())
    ratio = lhs.value / rhs if rhs > 0 else (0.0 if lhs.value == 0 else math.inf)
    return BoundReport(lhs.value, lhs.stderr, rhs, ratio, k, terms)
