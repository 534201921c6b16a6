"""Experiment configuration, reference oracles and report emission.

The oracles here are deliberately independent of the regression solvers:
:func:`oracle_constant_control` prices constant controls with the forward
simulator and a pathwise recursion for the affine backward part, and
:func:`oracle_riccati_lq` integrates the scalar Riccati equation with scipy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import adjoint as adj_mod
from .backward import (RegressionBasis, backward_stability, compare_schemes,
                       solve_bsdep_zero_terminal, stability_prefactor, truncation_gap)
from .control import (ControlProcess, difference_quotient, perturbation_convergence,
                      simulate_variational, solve_trajectory, variational_inequality_lhs,
                      bar_partials)
from .errors import AssumptionViolation, ConfigError, NoStabilizingSolution
from .forward import (check_decay, forward_apriori_bound, forward_apriori_gap,
                      highorder_bound_check, simulate_forward, weighted_moment)
from .measure import density_summary, girsanov_density, observation_process, weak_novikov_estimate
from .model import DiscountProfile, ModelSpec, TimeGrid, default_probes, discount_weights, validate_assumptions
from .noise import sample_noise
from .presets import get_preset
from .reports import config_hash, file_sha256, write_csv, write_json

TASKS = ("validate", "simulate", "solve-bsde", "estimates", "variational", "adjoint",
         "max-principle", "oracle")
MIN_PATHS = 100
VERSION = "0.1.0"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    grid: TimeGrid
    n_paths: int
    seed: int
    profile: DiscountProfile = DiscountProfile()
    basis: RegressionBasis = RegressionBasis()
    epsilons: tuple = (0.1, 0.05, 0.025)
    horizons: tuple = ()
    output_dir: str = "out"
    control: dict = field(default_factory=lambda: {"kind": "constant", "value": 0.0})
    direction: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    epsilon: float = 0.1
    delta: Optional[float] = None
    u_grid: tuple = ()
    measure: str = "P_transformed"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {"horizon": self.grid.horizon, "n_steps": self.grid.n_steps}
        d["basis"] = self.basis.to_dict()
        d["epsilons"] = list(self.epsilons)
        d["horizons"] = list(self.horizons)
        d["u_grid"] = list(self.u_grid)
        return d

    def spec(self) -> ModelSpec:
        return get_preset(self.preset).spec

    @classmethod
    def from_dict(cls, raw: dict, seed: Optional[int] = None,
                  output_dir: Optional[str] = None) -> "ExperimentConfig":
        """Validate a JSON-like mapping; missing fields take the preset's defaults."""
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {"preset", "grid", "n_paths", "seed", "profile", "basis", "epsilons", "horizons",
                 "output_dir", "control", "direction", "epsilon", "delta", "u_grid", "measure"}
        for key in raw:
            if key not in known:
                raise ConfigError("unknown field", field=key)
        name = raw.get("preset")
        if not isinstance(name, str):
            raise ConfigError("required string", field="preset")
        try:
            pre = get_preset(name)
        except KeyError:
            raise ConfigError(f"unknown preset {name!r}", field="preset") from None

        g = raw.get("grid", {})
        if not isinstance(g, dict):
            raise ConfigError("must be an object", field="grid")
        try:
            grid = TimeGrid(float(_num(g.get("horizon", pre.horizon), "grid.horizon")),
                            _int(g.get("n_steps", pre.n_steps), "grid.n_steps"))
        except ValueError as exc:
            raise ConfigError(str(exc), field="grid") from None

        n_paths = _int(raw.get("n_paths", pre.n_paths), "n_paths")
        if n_paths < MIN_PATHS:
            raise ConfigError(f"must be at least {MIN_PATHS}", field="n_paths")
        sd = _int(raw.get("seed", 0) if seed is None else seed, "seed")
        if sd < 0:
            raise ConfigError("must be nonnegative", field="seed")

        prof_raw = raw.get("profile", pre.spec.beta)
        if isinstance(prof_raw, (int, float)) and not isinstance(prof_raw, bool):
            profile = DiscountProfile.uniform(float(prof_raw))
        elif isinstance(prof_raw, dict):
            for k in prof_raw:
                if k not in {f"beta{i}" for i in range(6)}:
                    raise ConfigError("unknown discount factor", field=f"profile.{k}")
            profile = DiscountProfile(**{k: float(_num(v, f"profile.{k}")) for k, v in prof_raw.items()})
        else:
            raise ConfigError("must be a number or an object", field="profile")

        b_raw = raw.get("basis", {})
        if not isinstance(b_raw, dict):
            raise ConfigError("must be an object", field="basis")
        try:
            basis = RegressionBasis(**b_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), field="basis") from None

        eps = tuple(float(_num(v, f"epsilons[{i}]")) for i, v in enumerate(_list(raw.get("epsilons", [0.1, 0.05, 0.025]), "epsilons")))
        if any(e <= 0 for e in eps):
            raise ConfigError("entries must be positive", field="epsilons")
        hz = tuple(float(_num(v, f"horizons[{i}]")) for i, v in enumerate(_list(raw.get("horizons", list(pre.horizons)), "horizons")))
        if any(b <= a for a, b in zip(hz, hz[1:])):
            raise ConfigError("must be strictly increasing", field="horizons")
        if any(h <= 0 or h > grid.horizon + 1e-12 for h in hz):
            raise ConfigError("entries must lie in (0, grid.horizon]", field="horizons")
        ug = tuple(float(_num(v, f"u_grid[{i}]")) for i, v in enumerate(_list(raw.get("u_grid", []), "u_grid")))
        lo, hi = pre.spec.u_bounds
        if any(u < lo or u > hi for u in ug):
            raise ConfigError("entries must lie in the control set", field="u_grid")

        control = raw.get("control", pre.control)
        direction = raw.get("direction", pre.direction)
        build_control(control, pre.spec.u_bounds, "control")
        build_control(direction, (-math.inf, math.inf), "direction")
        measure = raw.get("measure", "P_transformed")
        if measure not in ("P_transformed", "P_bar"):
            raise ConfigError("must be 'P_transformed' or 'P_bar'", field="measure")
        epsilon = float(_num(raw.get("epsilon", 0.1), "epsilon"))
        delta = raw.get("delta")
        if delta is not None:
            delta = float(_num(delta, "delta"))
        out = raw.get("output_dir", "out") if output_dir is None else output_dir
        if not isinstance(out, str):
            raise ConfigError("must be a string", field="output_dir")
        return cls(name, grid, n_paths, sd, profile, basis, eps, hz, out, dict(control),
                   dict(direction), epsilon, delta, ug, measure)


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError("must be a finite number", field=where)
    return v


def _int(v, where):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        raise ConfigError("must be an integer", field=where)
    return v


def _list(v, where):
    if not isinstance(v, (list, tuple)):
        raise ConfigError("must be a list", field=where)
    return v


def load_config(path, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", field="config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc})", field="config") from None
    return ExperimentConfig.from_dict(raw, seed, output_dir)


def build_control(desc: dict, u_bounds=(-math.inf, math.inf), where: str = "control") -> ControlProcess:
    """Controls from config: ``constant`` (value), ``open_loop_exp`` (a + b e^{-rate t})
    or ``xi_linear`` (a + b ξ_t, clipped to the control set)."""
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ConfigError("must be an object with a 'kind'", field=where)
    kind = desc["kind"]
    allowed = {"constant": {"value"}, "open_loop_exp": {"a", "b", "rate"}, "xi_linear": {"a", "b"}}
    if kind not in allowed:
        raise ConfigError(f"unknown control kind {kind!r}", field=f"{where}.kind")
    for k in desc:
        if k != "kind" and k not in allowed[kind]:
            raise ConfigError("unknown parameter", field=f"{where}.{k}")
    p = {k: float(_num(desc.get(k, 0.0), f"{where}.{k}")) for k in allowed[kind]}
    lo, hi = u_bounds
    if kind == "constant":
        if not lo <= p["value"] <= hi:
            raise ConfigError("value outside the control set", field=f"{where}.value")
        return ControlProcess.constant(p["value"], u_bounds)
    if kind == "open_loop_exp":
        a, b, r = p["a"], p["b"], p["rate"]
        return ControlProcess.open_loop(lambda t: np.clip(a + b * math.exp(-r * t), lo, hi), u_bounds,
                                        label=f"{a:g}+{b:g}exp(-{r:g}t)")
    a, b = p["a"], p["b"]
    return ControlProcess.observation_feedback(lambda t, f: np.clip(a + b * f["xi"], lo, hi), u_bounds,
                                               label=f"{a:g}+{b:g}xi")


# ---------------------------------------------------------------------------
# oracles


@dataclass(frozen=True)
class OracleResult:
    u_star: float
    J_star: float
    search_grid: str
    method: str
    u_values: tuple = ()
    J_values: tuple = ()
    stderrs: tuple = ()
    flat: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"u_star": self.u_star, "J_star": self.J_star, "search_grid": self.search_grid,
                "method": self.method, "u_values": list(self.u_values),
                "J_values": list(self.J_values), "stderrs": list(self.stderrs),
                "flat": self.flat, "extra": dict(self.extra)}


def _cell_weights(rate: float, h: float) -> tuple:
    """(A, B) with ∫₀ʰ e^{-rate·s} g(s) ds = A g(0) + B g(h) for linear g."""
    if rate * h < 1e-8:
        return h / 2, h / 2
    i0 = -math.expm1(-rate * h) / rate
    i1 = (1.0 - math.exp(-rate * h) * (1.0 + rate * h)) / rate ** 2
    return i0 - i1 / h, i1 / h


def constant_control_cost_samples(spec: ModelSpec, bundle, u: float) -> np.ndarray:
    """Per-path discounted cost of the constant control ``u``.

    Needs ``spec.affine_backward``: y is then a discounted integral of the
    source along the realised future, whose conditional mean is the backward
    solution, which is all the (linear-in-y) cost needs.  Both that integral
    and the cost integral interpolate linearly inside each cell with exact
    exponential weights, so the oracle is second order in dt and shares no
    discretisation with the regression solver.
    """
    ab = spec.affine_backward
    if ab is None:
        raise ValueError("oracle_constant_control needs a spec with an affine backward declaration")
    ctrl = ControlProcess.constant(u)
    fwd = simulate_forward(spec, ctrl, bundle, "P_transformed")
    grid = bundle.grid
    N, dt = grid.n_steps, grid.dt
    t = grid.times
    x = fwd.x
    uu = np.concatenate([fwd.u, fwd.u[:, -1:]], axis=1)
    src = np.broadcast_to(np.asarray(ab.source(x, uu, t), dtype=float), x.shape)
    Y = np.zeros((N + 1, bundle.n_paths))
    srcT = np.ascontiguousarray(src.T)
    decay = math.exp(-ab.kappa * dt)
    a, b = _cell_weights(ab.kappa, dt)
    for j in range(N - 1, -1, -1):
        Y[j] = decay * Y[j + 1] + a * srcT[j] + b * srcT[j + 1]
    Y = Y.T
    xi = observation_process(fwd, ctrl, spec, bundle)
    Z = girsanov_density(fwd, ctrl, spec, xi).Z
    f0 = np.broadcast_to(np.asarray(ab.f0(x, uu), dtype=float), x.shape)
    run = Z * (f0 + ab.c_f * Y)
    a, b = _cell_weights(spec.beta, dt)
    disc = np.exp(-spec.beta * t[:-1])
    return run[:, :-1] @ (a * disc) + run[:, 1:] @ (b * disc) + ab.phi0 + ab.phi_c * Y[:, 0]


def oracle_constant_control(spec: ModelSpec, bundle, u_grid: Sequence[float],
                            refine: bool = True, richardson: bool = False) -> OracleResult:
    """Brute-force minimiser over constant controls on common random numbers.

    A parabola through the best grid point and its neighbours refines the
    argmin.  A landscape whose spread is at rounding level is flagged flat and
    resolved toward the smallest |u|.  With ``richardson`` each cost is
    2·J(dt) - J(2dt), the coarse value coming from the same noise with
    increments summed in pairs; this removes the O(dt) Euler bias.
    """
    us = np.asarray(sorted(float(u) for u in u_grid))
    if us.size == 0:
        raise ValueError("u_grid must be non-empty")
    lo, hi = spec.u_bounds
    if np.any(us < lo) or np.any(us > hi):
        raise ValueError("u_grid must lie inside the control set")
    coarse = bundle.coarsen(2) if richardson else None
    Js, ses = [], []
    for u in us:
        s = constant_control_cost_samples(spec, bundle, u)
        if coarse is not None:
            s = 2 * s - constant_control_cost_samples(spec, coarse, u)
        Js.append(float(s.mean()))
        ses.append(float(s.std(ddof=1) / math.sqrt(s.shape[0])) if s.shape[0] > 1 else 0.0)
    J = np.asarray(Js)
    desc = f"{us.size} points in [{us[0]:g}, {us[-1]:g}]" + (", Richardson in dt" if richardson else "")
    spread = float(J.max() - J.min())
    if spread <= 1e-12 * max(1.0, float(np.max(np.abs(J)))):
        i = int(np.argmin(np.abs(us)))
        return OracleResult(float(us[i]), float(J[i]), desc, "constant_grid", tuple(us), tuple(J),
                            tuple(ses), True)
    i = int(np.argmin(J))
    u_star, J_star = float(us[i]), float(J[i])
    if refine and 0 < i < us.size - 1:
        a, b, c = us[i - 1:i + 2]
        fa, fb, fc = J[i - 1:i + 2]
        coef = np.polyfit([a, b, c], [fa, fb, fc], 2)
        if coef[0] > 0:
            v = float(np.clip(-coef[1] / (2 * coef[0]), a, c))
            pv = float(np.polyval(coef, v))
            if pv <= J_star:
                u_star, J_star = v, pv
    return OracleResult(u_star, J_star, desc, "constant_grid", tuple(us), tuple(J), tuple(ses), False,
                        {"grid_argmin": float(us[i])})


def _riccati_rhs(a, b, beta, sw, cw):
    def f(_, P):
        return sw + (2 * a - beta) * P - (b * b / cw) * P * P
    return f


def oracle_riccati_lq(a: float, sigma: float, beta: float, state_weight: float,
                      control_weight: float, b: float = 1.0) -> OracleResult:
    """Discounted scalar LQ: minimise E∫e^{-βt}(state_weight x² + control_weight u²)dt
    for dx = (a x + b u)dt + σ dW.

    The value is V(x) = P x² + σ²P/β.  P is found by integrating the
    time-to-go Riccati ODE dP/dτ = sw + (2a - β)P - (b²/cw)P² from P = 0 to
    stationarity, then polished with Newton steps on the algebraic equation.
    ``u_star`` is the feedback gain b P / cw (control = -gain·x).
    """
    if not control_weight > 0:
        raise ValueError("control_weight must be positive")
    rhs = _riccati_rhs(a, b, beta, state_weight, control_weight)
    P, tau = 0.0, 0.0
    for _ in range(200):
        sol = solve_ivp(lambda t, y: [rhs(t, y[0])], (0.0, 50.0), [P], method="LSODA",
                        rtol=1e-12, atol=1e-14)
        if not sol.success or not np.all(np.isfinite(sol.y)):
            raise NoStabilizingSolution("Riccati integration failed")
        P = float(sol.y[0, -1])
        tau += 50.0
        if abs(P) > 1e12:
            raise NoStabilizingSolution(f"Riccati solution diverges (P={P:.3g} at tau={tau:g})")
        if abs(rhs(0, P)) < 1e-13 * max(1.0, abs(P)):
            break
    else:
        raise NoStabilizingSolution("Riccati ODE did not reach stationarity")
    for _ in range(20):
        d = (2 * a - beta) - 2 * (b * b / control_weight) * P
        if d == 0:
            break
        step = rhs(0, P) / d
        P -= step
        if abs(step) < 1e-16 * max(1.0, abs(P)):
            break
    slope = (2 * a - beta) - 2 * (b * b / control_weight) * P
    if P < -1e-14 or slope >= 0:
        raise NoStabilizingSolution(f"root P={P:.6g} is not stabilizing")
    P = max(P, 0.0)
    gain = b * P / control_weight
    resid = abs(rhs(0, P))
    return OracleResult(gain, P, f"ODE to tau={tau:g}", "riccati_ode",
                        extra={"gain": gain, "value_coefficient": P, "residual": resid,
                               "constant": sigma * sigma * P / beta if beta > 0 else math.inf,
                               "closed_loop_rate": a - b * gain})


def lq_mean_control(a: float, beta: float, q: float, r: float, ell: float, k: float) -> dict:
    """Full-information optimum of E∫e^{-βt}(½qx² + ½ru² + ℓu + kx)dt with
    dx = (ax + u)dt + σdW: u = -(ℓ + Px + S)/r.  Returns P, S and the
    stationary mean of the optimal control."""
    ric = oracle_riccati_lq(a, 0.0, beta, q / 2, r / 2)
    P = 2 * ric.J_star
    S = (k - P * ell / r) / (beta - a + P / r)
    u_bar = (-ell - S) / (r - P / a) if a != 0 else math.nan
    return {"P": P, "S": S, "gain": P / r, "offset": -(ell + S) / r, "u_stationary": u_bar}


def suggest_truncation_horizon(spec: ModelSpec, profile: Optional[DiscountProfile] = None,
                               tol: float = 1e-6, scale: float = 1.0,
                               cap: Optional[float] = None) -> float:
    """Smallest n with e^{-βn}·scale <= tol, i.e. n = max(0, ln(scale/tol)/β)."""
    rate = spec.beta if profile is None else min(spec.beta, profile.beta2)
    if not rate > 0:
        raise ValueError("a positive discount rate is required")
    if not (tol > 0 and scale > 0):
        raise ValueError("tol and scale must be positive")
    n = max(0.0, math.log(scale / tol) / rate)
    return min(n, cap) if cap is not None else n


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ReportSet:
    task: str
    output_dir: Path
    files: dict
    summary: dict
    status: str = "ok"


def _series_rows(times, *cols):
    return [tuple([float(t)] + [float(c[j]) for c in cols]) for j, t in enumerate(times)]


def _mean_se(a):
    n = a.shape[0]
    return a.mean(axis=0), (a.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(a.shape[1:]))


def run_experiment(config: ExperimentConfig, task: str) -> ReportSet:
    """Run one task, writing CSV/JSON reports and ``manifest.json`` into the output dir.

    Outputs depend only on the config (its hash is recorded) and the seed.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}", field="task")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.spec()
    files, summary = {}, {}
    runner = globals()["_task_" + task.replace("-", "_")]
    status = runner(config, spec, out, files, summary) or "ok"
    manifest = {"task": task, "preset": config.preset, "seed": config.seed,
                "config_hash": config_hash(config.to_dict()), "config": config.to_dict(),
                "version": VERSION, "status": status,
                "files": {name: file_sha256(p) for name, p in sorted(files.items())}}
    files["manifest"] = write_json(out / "manifest.json", manifest)
    return ReportSet(task, out, files, summary, status)


def _bundle(config, spec):
    return sample_noise(config.grid, spec.marks, config.n_paths, config.seed)


def _task_validate(config, spec, out, files, summary):
    u_vals = sorted({0.0, *[u for u in spec.u_bounds if math.isfinite(u)]})
    rep = validate_assumptions(spec, config.profile, default_probes(u_values=tuple(u_vals)))
    files["validation"] = write_json(out / "validation.json",
                                     {"all_passed": rep.all_passed, "entries": rep.to_list()})
    summary["all_passed"] = rep.all_passed
    return "ok" if rep.all_passed else "assumption_failure"


def _task_simulate(config, spec, out, files, summary):
    bundle = _bundle(config, spec)
    ctrl = build_control(config.control, spec.u_bounds)
    fwd = simulate_forward(spec, ctrl, bundle, config.measure)
    xi = observation_process(fwd, ctrl, spec, bundle)
    dens = girsanov_density(fwd, ctrl, spec, xi)
    mx, sx = _mean_se(fwd.x)
    var = fwd.x.var(axis=0, ddof=1) if fwd.n_paths > 1 else np.zeros_like(mx)
    mz, sz = _mean_se(dens.Z)
    files["forward_summary"] = write_csv(
        out / "forward_summary.csv", ["t", "mean_x", "stderr_x", "var_x", "mean_Z", "stderr_Z"],
        _series_rows(fwd.grid.times, mx, sx, var, mz, sz))
    moments = {kind: weighted_moment(fwd, spec.beta, 1, kind).to_dict()
               for kind in ("sup_of_mean", "mean_of_sup", "integral")}
    decay = check_decay(fwd, spec.beta)
    nov = weak_novikov_estimate(fwd, ctrl, spec)
    summary.update({"moments": moments, "decay_rate": decay.fitted_rate, "novikov": nov.to_dict(),
                    "density_sde_discrepancy": dens.sde_discrepancy})
    files["simulate"] = write_json(out / "simulate.json", summary)


def _task_solve_bsde(config, spec, out, files, summary):
    bundle = _bundle(config, spec)
    ctrl = build_control(config.control, spec.u_bounds)
    fwd = simulate_forward(spec, ctrl, bundle, config.measure)
    horizons = config.horizons or (config.grid.horizon,)
    sols = [solve_bsdep_zero_terminal(spec, fwd, bundle, n, config.basis) for n in horizons]
    rows = []
    for i, (n, s) in enumerate(zip(horizons, sols)):
        gap = truncation_gap(s, sols[i + 1], spec.beta).total if i + 1 < len(sols) else math.nan
        rows.append((float(n), s.y0, s.y0_stderr, gap))
    files["bsde_horizons"] = write_csv(out / "bsde_horizons.csv",
                                       ["n", "y0", "y0_stderr", "gap_to_next"], rows)
    zeta = lambda f, j: f.x[:, j]  # noqa: E731
    srows = [(float(n), compare_schemes(spec, fwd, bundle, n, zeta, config.basis).value)
             for n in horizons]
    files["scheme_gaps"] = write_csv(out / "scheme_gaps.csv", ["n", "gap"], srows)
    my, sy = _mean_se(sols[-1].y)
    files["y_profile"] = write_csv(out / "y_profile.csv", ["t", "mean_y", "stderr_y"],
                                   _series_rows(fwd.grid.times, my, sy))
    summary.update({"y0": sols[-1].y0, "y0_stderr": sols[-1].y0_stderr,
                    "horizons": list(horizons)})
    files["solve_bsde"] = write_json(out / "solve_bsde.json", summary)


def _task_estimates(config, spec, out, files, summary):
    bundle = _bundle(config, spec)
    ctrl = build_control(config.control, spec.u_bounds)
    fwd = simulate_forward(spec, ctrl, bundle, config.measure)
    summary["est1"] = forward_apriori_bound(spec, ctrl, bundle, config.epsilon, config.measure,
                                            path=fwd).to_dict()
    b1 = spec.drift_b
    spec2 = spec.with_(drift_b=lambda x, u, t: b1(x, u, t) + 0.1, name=spec.name + "+shift")
    summary["est2"] = forward_apriori_gap(spec, spec2, bundle, config.epsilon, ctrl,
                                          config.measure).to_dict()
    summary["highorder"] = {f"k{k}": highorder_bound_check(fwd, ctrl, spec, config.profile, k).to_dict()
                            for k in (1, 2)}
    delta = config.delta
    if delta is None:
        # half of the room left by the monotonicity constant
        delta = 0.5 * stability_prefactor(spec, 0.0)
    if delta > 0:
        g1 = spec.generator_g
        spec_g2 = spec.with_(generator_g=lambda *a: g1(*a) + 0.1)
        summary["stability"] = backward_stability(spec, spec_g2, fwd, bundle, delta,
                                                  basis=config.basis).to_dict()
    else:
        summary["stability"] = {"skipped": "no admissible delta: -beta - 2 mu2 - 2 sum K_i^2 <= 0"}
    files["estimates"] = write_json(out / "estimates.json", summary)


def _task_variational(config, spec, out, files, summary):
    bundle = _bundle(config, spec)
    ub = build_control(config.control, spec.u_bounds)
    v = build_control(config.direction, where="direction")
    table = perturbation_convergence(spec, ub, v, bundle, config.epsilons, None, config.basis,
                                     config.profile.beta2, config.measure)
    files["rates"] = write_csv(out / "rates.csv", ["epsilon", "name", "norm", "slope"], table.rows())
    traj = solve_trajectory(spec, ub, bundle, None, config.basis, config.measure)
    D = bar_partials(spec, traj)
    var = simulate_variational(spec, ub, v, traj, bundle, partials=D)
    lhs = variational_inequality_lhs(spec, bundle, ub, v, var, traj, D)
    form = "transformed_P" if config.measure == "P_transformed" else "original_Pbar"
    dqs = {str(e): difference_quotient(spec, ub, v, e, bundle, None, config.basis, traj, form).to_dict()
           for e in config.epsilons}
    summary.update({"lhs": lhs.to_dict(), "difference_quotients": dqs,
                    "slopes": table.slopes, "remainder_slopes": table.remainder_slopes})
    files["variational"] = write_json(out / "variational.json", summary)


def _adjoint_setup(config, spec):
    bundle = _bundle(config, spec)
    ub = build_control(config.control, spec.u_bounds)
    traj = solve_trajectory(spec, ub, bundle, None, config.basis, config.measure)
    D = bar_partials(spec, traj)
    sc = adj_mod.sufficient_condition_check(spec, adj_mod.estimate_bounds(spec, traj, D))
    return bundle, ub, traj, D, sc


def _task_adjoint(config, spec, out, files, summary):
    bundle, ub, traj, D, sc = _adjoint_setup(config, spec)
    summary["sufficient_condition"] = sc.to_dict()
    if not sc.passed:
        files["adjoint"] = write_json(out / "adjoint.json", summary)
        return "assumption_failure"
    adj = adj_mod.solve_adjoints(spec, traj, bundle, partials=D)
    t = traj.fwd.grid.times
    mp, sp = _mean_se(adj.p)
    mq, sq = _mean_se(adj.q)
    mQ, sQ = _mean_se(adj.Q)
    files["adjoint_summary"] = write_csv(
        out / "adjoint_summary.csv",
        ["t", "mean_p", "mean_q", "mean_Q", "stderr_p", "stderr_q", "stderr_Q"],
        _series_rows(t, mp, mq, mQ, sp, sq, sQ))
    v = build_control(config.direction, where="direction")
    var = simulate_variational(spec, ub, v, traj, bundle, partials=D)
    tv = adj_mod.transversality_check(adj, var, spec.beta, t)
    files["transversality"] = write_csv(
        out / "transversality.csv", ["t", "p_y1", "Q_Z1", "q_x1"],
        _series_rows(tv.times, tv.series["p_y1"], tv.series["Q_Z1"], tv.series["q_x1"]))
    dual = adj_mod.duality_residual(spec, traj, var, adj, t[adj.n_idx // 2], D)
    summary.update({"tail_ratio": tv.tail_ratio, "fitted_rate": tv.fitted_rate,
                    "duality_residual": {"value": dual.residual, "stderr": dual.stderr}})
    files["adjoint"] = write_json(out / "adjoint.json", summary)


def _task_max_principle(config, spec, out, files, summary):
    bundle, ub, traj, D, sc = _adjoint_setup(config, spec)
    summary["sufficient_condition"] = sc.to_dict()
    if not sc.passed:
        files["max_principle"] = write_json(out / "max_principle.json", summary)
        return "assumption_failure"
    adj = adj_mod.solve_adjoints(spec, traj, bundle, partials=D)
    prof = adj_mod.maximum_condition_test(spec, traj, adj, partials=D)
    files["max_condition"] = write_csv(out / "max_condition.csv", ["t", "estimate", "stderr"],
                                       prof.rows())
    ratio = np.abs(prof.estimate) / np.maximum(prof.stderr, 1e-300)
    summary.update({"violation_score": prof.violation_score,
                    "max_abs_estimate_over_stderr": float(ratio.max()),
                    "interior_zero_within_3se": bool(np.all(ratio < 3))})
    files["max_principle"] = write_json(out / "max_principle.json", summary)


def _task_oracle(config, spec, out, files, summary):
    if spec.affine_backward is None:
        raise ConfigError("preset declares no affine backward part, so the constant-control "
                          "oracle cannot price it", field="preset")
    bundle = _bundle(config, spec)
    lo, hi = spec.u_bounds
    if config.u_grid:
        ug = config.u_grid
    else:
        ug = tuple(np.linspace(max(lo, -2.0), min(hi, 2.0), 41))
    res = oracle_constant_control(spec, bundle, ug)
    files["oracle_grid"] = write_csv(out / "oracle_grid.csv", ["u", "J", "stderr"],
                                     list(zip(res.u_values, res.J_values, res.stderrs)))
    summary["constant_control"] = {k: v for k, v in res.to_dict().items()
                                   if k not in ("u_values", "J_values", "stderrs")}
    files["oracle"] = write_json(out / "oracle.json", summary)
