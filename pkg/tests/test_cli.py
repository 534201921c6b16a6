import json
import subprocess
import sys

import pytest

from fbsdep.cli import build_parser, main


def write_cfg(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


SMALL = {"n_paths": 100, "grid": {"horizon": 2.0, "n_steps": 40}}


def test_parser_has_every_task():
    parser = build_parser()
    for task in ("validate", "simulate", "solve-bsde", "estimates", "variational", "adjoint",
                 "max-principle", "oracle"):
        args = parser.parse_args([task, "--config", "c.json", "--seed", "3", "--out", "o"])
        assert args.task == task and args.seed == 3 and args.out == "o"


def test_ok_exit(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"preset": "ou-forward", **SMALL})
    assert main(["simulate", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "o")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "ok" and (tmp_path / "o" / "forward_summary.csv").exists()


@pytest.mark.parametrize("argv_tail", [["--config", "/nonexistent.json"], []])
def test_config_exit(tmp_path, argv_tail):
    assert main(["simulate", *argv_tail]) == 2


def test_bad_json_and_bad_field_exit(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["validate", "--config", str(p)]) == 2
    cfg = write_cfg(tmp_path, {"preset": "ou-forward", "n_paths": 5})
    assert main(["validate", "--config", cfg]) == 2


def test_assumption_exit(tmp_path):
    # g ≡ 0 cannot satisfy the strict backward monotonicity condition
    cfg = write_cfg(tmp_path, {"preset": "zero", "horizons": [1.0, 2.0], **SMALL})
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_assumption_exit_on_invalid_epsilon(tmp_path):
    cfg = write_cfg(tmp_path, {"preset": "ou-forward", "epsilon": -1.0, **SMALL})
    assert main(["estimates", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_numerical_exit(tmp_path):
    # an explosive open-loop control drives |x| past the blow-up threshold
    cfg = write_cfg(tmp_path, {"preset": "ou-forward", "n_paths": 100,
                               "grid": {"horizon": 40.0, "n_steps": 400},
                               "control": {"kind": "open_loop_exp", "a": 0.0, "b": 1.0, "rate": -1.0}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 4


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fbsdep", "validate", "--preset", "lq-scalar",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads((tmp_path / "validation.json").read_text())["all_passed"]
