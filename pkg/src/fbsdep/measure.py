"""Observation process, Girsanov density and discounted Novikov diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .forward import ForwardPath
from .model import ModelSpec, discount_weights


@dataclass(frozen=True, eq=False)
class XiPath:
    xi: np.ndarray
    dxi: np.ndarray
    measure: str


@dataclass(frozen=True, eq=False)
class DensityPath:
    Z: np.ndarray
    log_Z: np.ndarray
    beta: float
    sde_discrepancy: float

    def at(self, j: int) -> np.ndarray:
        return self.Z[:, j]


def observation_process(fwd: ForwardPath, control, spec: ModelSpec, bundle) -> XiPath:
    """ξ on the grid.

    Under ``P_bar`` this is the observation equation dξ = e^{-βt/2} h dt + dW̃,
    accumulated with left-point h.  Under ``P_transformed`` ξ is itself the
    Brownian driver, so its increments are the bundle's W̃ increments.
    """
    if fwd.measure == "P_bar":
        t = fwd.grid.times[:-1]
        dxi = (np.exp(-0.5 * spec.beta * t) * spec.evaluate("h", fwd.x[:, :-1], fwd.u) * fwd.grid.dt
               + bundle.dWt)
    else:
        dxi = np.array(bundle.dWt, dtype=float)
    xi = np.concatenate([np.zeros((dxi.shape[0], 1)), np.cumsum(dxi, axis=1)], axis=1)
    return XiPath(xi, dxi, fwd.measure)


def girsanov_density(fwd: ForwardPath, control, spec: ModelSpec, xi: XiPath) -> DensityPath:
    """log Z_t = ∫ e^{-βs/2} h dξ - ½ ∫ e^{-βs} h² ds with left-point h.

    ``sde_discrepancy`` is max_t E|Z^{Euler} - Z| for the Euler scheme on
    dZ = e^{-βt/2} Z h dξ, a consistency statistic that shrinks with dt.
    """
    grid = fwd.grid
    t = grid.times[:-1]
    e = np.exp(-0.5 * spec.beta * t)
    h = spec.evaluate("h", fwd.x[:, :-1], fwd.u)
    inc = e * h * xi.dxi - 0.5 * e ** 2 * h ** 2 * grid.dt
    P = fwd.n_paths
    log_Z = np.concatenate([np.zeros((P, 1)), np.cumsum(inc, axis=1)], axis=1)
    Z = np.exp(log_Z)
    euler = np.concatenate([np.ones((P, 1)), np.cumprod(1.0 + e * h * xi.dxi, axis=1)], axis=1)
    disc = float(np.max(np.mean(np.abs(euler - Z), axis=0)))
    return DensityPath(Z, log_Z, spec.beta, disc)


@dataclass(frozen=True)
class NovikovReport:
    estimate: float
    stderr: float
    finite: bool
    deterministic_bound: float
    exponent_mean: float
    head_slope: float
    tail_slope: float

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "finite": bool(self.finite),
                "deterministic_bound": self.deterministic_bound,
                "exponent_mean": self.exponent_mean,
                "head_slope": self.head_slope, "tail_slope": self.tail_slope}


def weak_novikov_estimate(fwd: ForwardPath, control, spec: ModelSpec,
                          include_tail: bool = True) -> NovikovReport:
    """MC estimate of E[exp(½ ∫ e^{-βt} h² dt)].

    The integral uses exact-discount cell weights; for β > 0 the tail beyond
    the grid is closed with h frozen at its last value.  ``finite`` is False
    when the per-time growth of the exponent does not die out over the
    horizon, which is what happens without discounting.
    """
    grid = fwd.grid
    beta = spec.beta
    h2 = spec.evaluate("h", fwd.x[:, :-1], fwd.u) ** 2
    w = discount_weights(grid.times, beta)
    cum = 0.5 * np.cumsum(h2 * w, axis=1)
    expo = cum[:, -1]
    if include_tail and beta > 0:
        hT = spec.evaluate("h", fwd.x[:, -1], fwd.u[:, -1])
        expo = expo + 0.5 * math.exp(-beta * grid.horizon) * hT ** 2 / beta
    vals = np.exp(expo)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.shape[0])) if vals.shape[0] > 1 else 0.0
    rate = (0.5 * h2 * w / grid.dt).mean(axis=0)
    q = max(1, rate.shape[0] // 4)
    head, tail = float(rate[:q].mean()), float(rate[-q:].mean())
    finite = bool(np.isfinite(est) and (head <= 0 or tail <= 0.5 * head))
    if spec.h_bound is not None and beta > 0:
        bound = math.exp(spec.h_bound ** 2 / (2 * beta))
    else:
        bound = math.inf
    return NovikovReport(est, se, finite, bound, float(expo.mean()), head, tail)


def reweighted_expectation(values: np.ndarray, density: DensityPath, j: Optional[int] = None,
                           return_stderr: bool = False):
    """E[Z_t · value]: a P̄-expectation computed from P samples (``j`` defaults to the last index)."""
    Zt = density.Z[:, -1 if j is None else j]
    s = Zt * np.asarray(values, dtype=float)
    m = float(s.mean())
    if return_stderr:
        return m, float(s.std(ddof=1) / math.sqrt(s.shape[0])) if s.shape[0] > 1 else 0.0
    return m


def density_summary(density: DensityPath, times: np.ndarray, indices=None) -> list:
    """Rows {t, mean_Z, stderr, min_Z, max_logZ} at the requested grid indices."""
    idx = range(density.Z.shape[1]) if indices is None else indices
    out = []
    n = density.Z.shape[0]
    for j in idx:
        z = density.Z[:, j]
        out.append({"t": float(times[j]), "mean_Z": float(z.mean()),
                    "stderr": float(z.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                    "min_Z": float(z.min()), "max_logZ": float(density.log_Z[:, j].max())})
    return out
