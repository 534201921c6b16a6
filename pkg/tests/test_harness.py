import json
import math

import numpy as np
import pytest

from conftest import small_bundle
from fbsdep.errors import ConfigError, NoStabilizingSolution
from fbsdep.harness import (ExperimentConfig, build_control, lq_mean_control, oracle_constant_control,
                            oracle_riccati_lq, run_experiment, suggest_truncation_horizon)
from fbsdep.model import AffineBackward, DiscountProfile, ModelSpec
from fbsdep.presets import get_preset, preset_names
from fbsdep.reports import config_hash, read_csv, write_csv


def quad_spec(f0, **kw):
    return ModelSpec(drift_b=lambda x, u, t: -x + u, diff_sigma=lambda x, u, t: 0.3 + 0.0 * x,
                     affine_backward=AffineBackward(0.0, lambda x, u, t: 0.0 * x, f0), **kw)


def test_oracle_pure_control_cost():
    spec = quad_spec(lambda x, u: u * u + 0.0 * x)
    res = oracle_constant_control(spec, small_bundle(spec, n_paths=100), np.linspace(-1, 1, 11))
    assert res.u_star == pytest.approx(0.0, abs=1e-12) and not res.flat
    assert res.J_star <= min(res.J_values) + 1e-15


def test_oracle_flat_landscape_prefers_small_u():
    spec = ModelSpec(affine_backward=AffineBackward(0.0, lambda x, u, t: 0.0 * x, lambda x, u: 1.0 + 0.0 * x))
    res = oracle_constant_control(spec, small_bundle(spec, n_paths=100), [-0.6, -0.2, 0.3, 0.9])
    assert res.flat and res.u_star == -0.2


def test_oracle_rejects_outside_control_set():
    spec = get_preset("lq-scalar-boundary").spec
    with pytest.raises(ValueError):
        oracle_constant_control(spec, small_bundle(spec, n_paths=100), [-0.5, 0.5])


def test_oracle_lq_matches_riccati_mean(lq_spec, lq_bundle):
    ug = np.linspace(0.0, 1.0, 11)
    res = oracle_constant_control(lq_spec, lq_bundle, ug)
    # effective cost ∫e^{-t}(½x² + ½u² - u + ½x)dt under dx = (-x + u)dt + ½dW
    ref = lq_mean_control(-1.0, 1.0, 1.0, 1.0, -1.0, 0.5)
    assert ref["u_stationary"] == pytest.approx(0.5, abs=1e-10)
    assert abs(res.u_star - ref["u_stationary"]) <= ug[1] - ug[0]


def test_riccati_examples():
    assert oracle_riccati_lq(-1.0, 0.5, 1.0, 0.0, 1.0).u_star == 0.0
    g = oracle_riccati_lq(-50.0, 0.5, 100.0, 1.0, 1.0).u_star
    assert 0 < g < 1e-2
    res = oracle_riccati_lq(0.3, 0.4, 1.0, 2.0, 0.5)
    a, b, beta, sw, cw = 0.3, 1.0, 1.0, 2.0, 0.5
    P = res.J_star
    assert abs(sw + (2 * a - beta) * P - b * b * P * P / cw) < 1e-10
    disc = (2 * a - beta) ** 2 + 4 * sw * b * b / cw
    assert P == pytest.approx(((2 * a - beta) + math.sqrt(disc)) * cw / (2 * b * b), rel=1e-12)
    assert res.extra["closed_loop_rate"] < beta / 2


def test_riccati_errors():
    with pytest.raises(ValueError):
        oracle_riccati_lq(-1.0, 0.5, 1.0, 1.0, 0.0)
    with pytest.raises(NoStabilizingSolution):
        oracle_riccati_lq(2.0, 0.5, 1.0, 1.0, 1.0, b=0.0)


def test_truncation_horizon_examples():
    spec = ModelSpec(beta=1.0)
    assert suggest_truncation_horizon(spec, tol=1e-6) == pytest.approx(13.815510557964274)
    assert suggest_truncation_horizon(spec, tol=1.0) == 0.0
    assert suggest_truncation_horizon(spec.with_(beta=0.5), tol=1e-6) == pytest.approx(2 * 13.815510557964274)
    assert suggest_truncation_horizon(spec, tol=1e-6, cap=5.0) == 5.0
    with pytest.raises(ValueError):
        suggest_truncation_horizon(spec.with_(beta=0.0))


@pytest.mark.parametrize("raw,field", [
    ({"preset": "nope"}, "preset"),
    ({}, "preset"),
    ({"preset": "zero", "colour": 1}, "colour"),
    ({"preset": "zero", "n_paths": 10}, "n_paths"),
    ({"preset": "zero", "n_paths": "many"}, "n_paths"),
    ({"preset": "zero", "horizons": [2.0, 1.0]}, "horizons"),
    ({"preset": "zero", "grid": {"horizon": 1.0, "n_steps": 0}}, "grid"),
    ({"preset": "zero", "basis": {"kind": "spline"}}, "basis"),
    ({"preset": "zero", "control": {"kind": "magic"}}, "control"),
    ({"preset": "zero", "measure": "Q"}, "measure"),
    ({"preset": "zero", "profile": {"gamma": 1.0}}, "profile.gamma"),
    ({"preset": "lq-scalar-boundary", "u_grid": [2.0]}, "u_grid"),
])
def test_config_errors_name_field(raw, field):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(raw)
    assert exc.value.field is not None and exc.value.field.startswith(field)


def test_config_roundtrip_and_alias():
    cfg = ExperimentConfig.from_dict({"preset": "ou-lq-scalar", "n_paths": 200}, seed=5)
    assert cfg.seed == 5 and cfg.preset == "ou-lq-scalar"
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert config_hash(again.to_dict()) == config_hash(cfg.to_dict())
    assert isinstance(cfg.profile, DiscountProfile)
    assert set(preset_names()) >= {"zero", "ou-forward", "linear-bsde", "jump-linear",
                                   "lq-scalar", "bounded-h-girsanov"}


def test_build_control_kinds():
    c = build_control({"kind": "constant", "value": 0.5})
    assert float(c.evaluate(0.0, None, {"xi": np.zeros(2)})[0]) == 0.5
    with pytest.raises(ConfigError):
        build_control({"kind": "constant", "value": 5.0}, (-1.0, 1.0))


def test_zero_preset_reports_are_zero(tmp_path):
    cfg = ExperimentConfig.from_dict({"preset": "zero", "n_paths": 100,
                                      "grid": {"horizon": 2.0, "n_steps": 40}, "horizons": [1.0, 2.0]},
                                     output_dir=str(tmp_path))
    rep = run_experiment(cfg, "simulate")
    header, rows = read_csv(rep.files["forward_summary"])
    assert header == ["t", "mean_x", "stderr_x", "var_x", "mean_Z", "stderr_Z"]
    assert all(float(r[1]) == 0.0 and float(r[3]) == 0.0 and float(r[4]) == 1.0 for r in rows)
    rep = run_experiment(cfg, "solve-bsde")
    _, rows = read_csv(rep.files["bsde_horizons"])
    assert all(float(r[1]) == 0.0 for r in rows)
    man = json.loads(rep.files["manifest"].read_text())
    assert man["seed"] == cfg.seed and len(man["config_hash"]) == 64


def test_unknown_task_rejected(tmp_path):
    cfg = ExperimentConfig.from_dict({"preset": "zero"}, output_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        run_experiment(cfg, "dance")


def test_oracle_task_needs_affine_part(tmp_path):
    cfg = ExperimentConfig.from_dict({"preset": "jump-linear", "n_paths": 100}, output_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        run_experiment(cfg, "oracle")


def test_same_config_byte_identical(tmp_path):
    raw = {"preset": "jump-linear", "n_paths": 150, "grid": {"horizon": 2.0, "n_steps": 80},
           "horizons": [1.0, 2.0], "seed": 3}
    outs = []
    for i in range(2):
        cfg = ExperimentConfig.from_dict(raw, output_dir=str(tmp_path / str(i)))
        rep = run_experiment(cfg, "solve-bsde")
        outs.append({k: p.read_bytes() for k, p in rep.files.items() if str(p).endswith(".csv")})
    assert outs[0] == outs[1] and outs[0]


def test_csv_format(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["a", "b"], [(1, 0.1)])
    assert p.read_bytes() == b"a,b\n1,1.00000000000000006e-01\n"
    with pytest.raises(ValueError):
        write_csv(tmp_path / "b.csv", ["a"], [(1, 2)])
