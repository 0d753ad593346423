"""Config validation, subcommand dispatch, artifacts and exit codes."""

import json
import math

import numpy as np
import pytest

from kamtori.cli import ConfigError, RunConfig, main, parse_config

from conftest import GOLDEN

ROTATOR = {"n": 1, "terms": [{"k": [0], "m": [2], "re": 0.5, "im": 0.0}]}
PENDULUM = {
    "n": 1,
    "terms": [
        {"k": [0], "m": [2], "re": 0.5, "im": 0.0},
        {"k": [1], "m": [0], "re": 5e-4, "im": 0.0},
    ],
}
STRONG = {
    "n": 1,
    "terms": [
        {"k": [0], "m": [2], "re": 0.5, "im": 0.0},
        {"k": [1], "m": [0], "re": 0.1, "im": 0.0},
    ],
}
ROUGH = {
    "n": 1,
    "terms": [{"k": [0], "m": [2], "re": 0.5, "im": 0.0}],
    "rough": [
        {
            "coordinate": 0,
            "amplitude": 1e-4,
            "profile": {
                "type": "bspline",
                "coefficients": [0.0, 0.52, 0.55, 0.05, -0.48, -0.55],
                "degree": 5,
            },
        }
    ],
}


@pytest.fixture
def write_files(tmp_path):
    def write(model, out_name, **extra):
        ham = tmp_path / "model.json"
        ham.write_text(json.dumps(model))
        doc = {
            "hamiltonian": str(ham),
            "omega": [GOLDEN],
            "y0": [GOLDEN],
            "out": str(tmp_path / out_name),
        }
        doc.update(extra)
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps(doc))
        return cfg, tmp_path / out_name

    return write


class TestParseConfig:
    def test_minimal_fills_defaults(self, write_files):
        cfg_path, _ = write_files(PENDULUM, "out")
        cfg = parse_config(cfg_path)
        assert cfg.omega == (GOLDEN,)
        assert cfg.sigma == 1.1
        assert cfg.horizon == 256
        assert cfg.rho == 0.05
        assert cfg.r == 0.35
        assert cfg.trunc == 64
        assert cfg.max_iter == 12
        assert cfg.condition_mode == "measured"
        assert cfg.l is None and cfg.tol is None

    def test_sigma_boundary_named(self, write_files):
        # n = 1 so sigma = 0 sits exactly on the excluded boundary
        cfg_path, _ = write_files(PENDULUM, "out", sigma=0.0)
        with pytest.raises(ConfigError, match="sigma.*strictly greater"):
            parse_config(cfg_path)

    def test_all_violations_reported_at_once(self, write_files):
        cfg_path, _ = write_files(
            PENDULUM, "out", gamma=-1.0, rho=0.0, l=3, max_iter=0, bogus=1
        )
        with pytest.raises(ConfigError) as exc:
            parse_config(cfg_path)
        text = str(exc.value)
        assert len(exc.value.violations) >= 5
        for frag in ("gamma", "rho", "l must be", "max_iter", "unknown key: bogus"):
            assert frag in text

    def test_missing_keys_named(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{}")
        with pytest.raises(ConfigError) as exc:
            parse_config(p)
        assert "missing key: hamiltonian" in exc.value.violations
        assert "missing key: omega" in exc.value.violations

    def test_missing_files_named(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"hamiltonian": "/nope.json", "omega": [0.5]}))
        with pytest.raises(ConfigError, match="hamiltonian file not found"):
            parse_config(p)
        with pytest.raises(ConfigError, match="config file not found"):
            parse_config(tmp_path / "absent.json")

    def test_invalid_lambda_rejected(self, write_files):
        cfg_path, _ = write_files(PENDULUM, "out", lambda_spec="mu * open('x')")
        with pytest.raises(ConfigError, match="lambda_spec"):
            parse_config(cfg_path)

    def test_torus_block_forms(self, write_files, tmp_path):
        cfg_path, _ = write_files(PENDULUM, "out", torus={"circle": {"y0": [0.3]}})
        assert parse_config(cfg_path).y0 == (0.3,)
        cfg_path2, _ = write_files(PENDULUM, "out", torus={"spin": 1})
        with pytest.raises(ConfigError, match="torus must be"):
            parse_config(cfg_path2)

    def test_echo_round_trips(self, write_files):
        cfg_path, out = write_files(ROTATOR, "echo", trunc=16)
        cfg = parse_config(cfg_path)
        assert main(["verify", "--config", str(cfg_path)]) == 0
        echoed = parse_config(out / "config.json")
        assert echoed == cfg


class TestDispatch:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_config_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["solve"])
        assert exc.value.code == 2

    def test_config_error_exits_1(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text("{}")
        assert main(["solve", "--config", str(p)]) == 1
        err = capsys.readouterr().err
        assert "config error: missing key: hamiltonian" in err

    def test_verify_exact_rotator(self, write_files):
        cfg_path, out = write_files(ROTATOR, "verify", trunc=16)
        assert main(["verify", "--config", str(cfg_path)]) == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["error_grid"] == 0.0
        assert cert["error_rho"] == 0.0
        assert cert["passed"]
        assert cert["conditions"]["condition2_ok"]
        assert (out / "config.json").is_file()

    def test_solve_pendulum_artifacts(self, write_files):
        cfg_path, out = write_files(PENDULUM, "solve")
        assert main(["solve", "--config", str(cfg_path)]) == 0
        names = {p.name for p in out.iterdir()}
        assert {
            "config.json",
            "certificate.json",
            "trace.jsonl",
            "torus_final.csv",
            "torus_samples.csv",
        } <= names
        lines = (out / "trace.jsonl").read_text().splitlines()
        assert len(lines) >= 2
        # stored mode amplitude 5e-4 means eps = 1e-3 after reality folding
        first = json.loads(lines[0])
        assert first["error"] == pytest.approx(2 * np.pi * 1e-3, rel=1e-3)
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["status"] == "converged"
        assert cert["error"] < 1e-12

    def test_solve_samples_csv_shape(self, write_files):
        cfg_path, out = write_files(PENDULUM, "solve2", trunc=32)
        assert main(["solve", "--config", str(cfg_path)]) == 0
        rows = (out / "torus_samples.csv").read_text().splitlines()
        assert rows[0] == "theta0,z0,z1"
        # odd sample grid at the final (possibly doubled) truncation order
        assert len(rows) >= 1 + 65 and (len(rows) - 1) % 2 == 1

    def test_run_gate_failure_names_condition(self, write_files):
        cfg_path, out = write_files(STRONG, "gate", target_error=1e-10)
        assert main(["run", "--config", str(cfg_path)]) == 1
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["termination_reason"] == "condition2_failed"
        assert cert["stages"] == []
        assert cert["conditions_measured"]["condition2_lhs"] > 1.0

    def test_run_pendulum_full_artifacts(self, write_files):
        cfg_path, out = write_files(PENDULUM, "run", target_error=1e-10)
        assert main(["run", "--config", str(cfg_path)]) == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["converged"]
        assert cert["termination_reason"] == "target_reached"
        stage_files = sorted(p.name for p in (out / "stages").iterdir())
        assert stage_files == [f"stage_{r['stage']}.jsonl" for r in cert["stages"]]
        assert (out / "torus_final.csv").is_file()
        assert cert["seed"] == 0

    def test_smooth_rough_ladder(self, write_files):
        cfg_path, out = write_files(
            ROUGH, "smooth", y0=[0.4], rho=0.02, r=0.8, count=2
        )
        assert main(["smooth", "--config", str(cfg_path)]) == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["passed"] and not cert["analytic_input"]
        assert cert["degrees"][0] == 8
        assert len(cert["gaps_c3"]) == len(cert["degrees"]) - 1
        rows = (out / "gaps.csv").read_text().splitlines()
        assert rows[0] == "k,degree,c0_gap,c3_gap,bound"
        assert len(rows) == 1 + len(cert["degrees"])
        first = rows[1].split(",")
        assert float(first[3]) == cert["gaps_c3"][0]
        assert float(first[3]) <= float(first[4])
        assert (out / "approximant_0.json").is_file()

    def test_smooth_analytic_input_short_circuit(self, write_files):
        cfg_path, out = write_files(PENDULUM, "smooth_an", count=3)
        assert main(["smooth", "--config", str(cfg_path)]) == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["analytic_input"]
        assert cert["gaps_c3"] == [0.0, 0.0]
        assert cert["a_const"] == 0.0

    def test_diophantine_json_report(self, capsys):
        assert main(["diophantine", "--omega", str(GOLDEN), "--sigma", "1.0"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["gamma_est"] == pytest.approx(0.3819660112501051, abs=1e-15)
        assert doc["worst_k"] == [1]
        assert doc["horizon"] == 10000

    def test_diophantine_resonant_rejected(self, capsys):
        code = main(
            ["diophantine", "--omega", "0.5", "--gamma", "0.3", "--sigma", "1.0"]
        )
        assert code == 1
        doc = json.loads(capsys.readouterr().out)
        assert not doc["passed"]
        assert doc["worst_k"] == [2]
        assert doc["margin"] == 0.0


class TestOverrides:
    def test_flag_overrides_apply(self, write_files, tmp_path):
        cfg_path, out = write_files(PENDULUM, "ovr")
        alt = tmp_path / "alt.json"
        alt.write_text(json.dumps(ROTATOR))
        code = main(
            [
                "solve",
                "--config",
                str(cfg_path),
                "--hamiltonian",
                str(alt),
                "--max-iter",
                "3",
                "--tol",
                "1e-10",
                "--trunc",
                "16",
            ]
        )
        assert code == 0
        echoed = json.loads((out / "config.json").read_text())
        assert echoed["hamiltonian"] == str(alt)
        assert echoed["max_iter"] == 3
        assert echoed["tol"] == 1e-10
        assert echoed["trunc"] == 16
        # rotator at the exact circle: zero error, zero iterations
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["error"] == 0.0
        assert cert["iterations"] == 0

    def test_out_flag_overrides_config(self, write_files, tmp_path):
        cfg_path, _ = write_files(ROTATOR, "ignored", trunc=16)
        alt_out = tmp_path / "elsewhere"
        assert main(["verify", "--config", str(cfg_path), "--out", str(alt_out)]) == 0
        assert (alt_out / "certificate.json").is_file()
        assert not (tmp_path / "ignored").exists()


class TestRunConfigHelpers:
    def test_to_json_key_order_stable(self, write_files):
        cfg_path, _ = write_files(PENDULUM, "out")
        cfg = parse_config(cfg_path)
        assert cfg.to_json() == cfg.to_json()
        keys = list(json.loads(cfg.to_json()))
        assert keys == sorted(keys)

    def test_frequency_prefers_explicit_gamma(self, write_files):
        cfg_path, _ = write_files(PENDULUM, "out", gamma=0.3, sigma=1.0)
        freq = parse_config(cfg_path).frequency()
        assert freq.gamma == 0.3
        cfg_path2, _ = write_files(PENDULUM, "out", sigma=1.0, horizon=10000)
        est = parse_config(cfg_path2).frequency()
        assert est.gamma == pytest.approx(0.3819660112501051, abs=1e-15)

    def test_load_torus_circle_default(self, write_files):
        cfg_path, _ = write_files(PENDULUM, "out", trunc=16)
        K = parse_config(cfg_path).load_torus()
        assert K.dim_domain == 1 and K.dim_range == 2
        theta = np.array([[0.25]])
        assert K(theta)[0] == pytest.approx([0.25, GOLDEN], abs=1e-14)
