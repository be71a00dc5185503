import json
import os

import pytest
from click.testing import CliRunner

from hybridlab.cli import main, parse_config
from hybridlab.errors import ParseError, ValidationError


def base_config(**overrides):
    cfg = {
        "scenario": "clitest",
        "generator": [[-1.0, 1.0], [2.0, -2.0]],
        "model": {
            "kind": "controlled_linear",
            "dim": 1,
            "noise_dim": 1,
            "drift": [[[1.0]], [[1.0]]],
            "gains": [[[-2.0]], [[-2.0]]],
            "diffusion": [[[[0.5]]], [[[0.5]]]],
            "rho": 0.1,
        },
        "sim": {"steps_per_rho": 4, "seed": 321},
        "samples": {"paths": 60, "starts": 8, "paths_per_start": 4},
        "times": {"t_burn": 6.0, "horizon": 4.0, "time_ladder": [2.0, 5.0],
                  "lookbacks": [3, 6], "pair_horizon": 1.0},
        "rho_ladder": [0.4, 0.2, 0.1],
        "tolerances": {"atom_cap": 80, "calibration_pairs": 2},
        "suites": ["stability"],
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_parse_config_records_certificate(tmp_path):
    cfg = parse_config(write_config(tmp_path, base_config()))
    assert cfg.provenance["certificate"]["certified"]
    assert cfg.provenance["certificate"]["beta"] == pytest.approx(1.75, abs=1e-12)
    assert cfg.scenario == "clitest"


def test_parse_config_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        parse_config(str(path))


def test_parse_config_missing_generator(tmp_path):
    raw = base_config()
    del raw["generator"]
    with pytest.raises(ValidationError, match="generator"):
        parse_config(write_config(tmp_path, raw))


def test_parse_config_bad_ladder(tmp_path):
    raw = base_config(rho_ladder=[0.1, 0.2])
    with pytest.raises(ValidationError, match="ladder"):
        parse_config(write_config(tmp_path, raw))


def test_validate_ok(tmp_path):
    res = CliRunner().invoke(main, ["validate", "--config",
                                    write_config(tmp_path, base_config())])
    assert res.exit_code == 0
    assert "certificate" in res.output


def test_validate_bad_config_exit_2(tmp_path):
    raw = base_config(generator=[[-1.0, 0.5], [2.0, -2.0]])
    res = CliRunner().invoke(main, ["validate", "--config",
                                    write_config(tmp_path, raw)])
    assert res.exit_code == 2


def test_simulate_writes_trajectory(tmp_path):
    path = write_config(tmp_path, base_config())
    res = CliRunner().invoke(main, ["simulate", "--config", path,
                                    "--out", str(tmp_path / "out")])
    assert res.exit_code == 0
    csv = tmp_path / "out" / "clitest" / "trajectory.csv"
    assert csv.exists()
    header = csv.read_text().splitlines()[0]
    assert header == "t,u_1,mode"


def test_simulate_blowup_exit_3(tmp_path):
    raw = base_config()
    raw["model"]["gains"] = [[[0.0]], [[0.0]]]
    raw["sim"]["blowup_guard"] = 100.0
    raw["times"]["horizon"] = 15.0
    res = CliRunner().invoke(main, ["simulate", "--config",
                                    write_config(tmp_path, raw),
                                    "--out", str(tmp_path / "out")])
    assert res.exit_code == 3
    assert "Blowup" in res.output


def test_measure_writes_atom_table(tmp_path):
    path = write_config(tmp_path, base_config())
    res = CliRunner().invoke(main, ["measure", "--config", path,
                                    "--out", str(tmp_path / "out")])
    assert res.exit_code == 0
    csv = tmp_path / "out" / "clitest" / "measure.csv"
    assert csv.exists()
    assert csv.read_text().splitlines()[0].startswith("weight,mode,seg_0")


def test_suite_pass_writes_artifacts(tmp_path):
    path = write_config(tmp_path, base_config())
    res = CliRunner().invoke(main, ["suite", "--config", path,
                                    "--out", str(tmp_path / "out")])
    assert res.exit_code == 0
    out = tmp_path / "out" / "clitest"
    assert (out / "stability.csv").exists()
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["passed"] is True
    assert verdict["suites"][0]["suite"] == "stability"
    assert "timestamp" in verdict


def test_suite_failure_exit_1(tmp_path):
    raw = base_config(expected_negative=True)  # certified model will NOT diverge
    res = CliRunner().invoke(main, ["suite", "--config",
                                    write_config(tmp_path, raw),
                                    "--out", str(tmp_path / "out")])
    assert res.exit_code == 1
    verdict = json.loads((tmp_path / "out" / "clitest" / "verdict.json").read_text())
    assert verdict["passed"] is False


def test_suite_unknown_name_exit_2(tmp_path):
    raw = base_config(suites=["mystery"])
    res = CliRunner().invoke(main, ["suite", "--config",
                                    write_config(tmp_path, raw),
                                    "--out", str(tmp_path / "out")])
    assert res.exit_code == 2


def test_suite_rerun_byte_identical(tmp_path):
    path = write_config(tmp_path, base_config())
    for d in ("a", "b"):
        res = CliRunner().invoke(main, ["suite", "--config", path,
                                        "--out", str(tmp_path / d)])
        assert res.exit_code == 0
    csv_a = (tmp_path / "a" / "clitest" / "stability.csv").read_bytes()
    csv_b = (tmp_path / "b" / "clitest" / "stability.csv").read_bytes()
    assert csv_a == csv_b
    va = json.loads((tmp_path / "a" / "clitest" / "verdict.json").read_text())
    vb = json.loads((tmp_path / "b" / "clitest" / "verdict.json").read_text())
    va.pop("timestamp"), vb.pop("timestamp")
    assert va == vb


def test_seed_override_changes_output(tmp_path):
    path = write_config(tmp_path, base_config())
    runner = CliRunner()
    runner.invoke(main, ["simulate", "--config", path, "--out", str(tmp_path / "a")])
    runner.invoke(main, ["simulate", "--config", path, "--seed", "999",
                         "--out", str(tmp_path / "b")])
    assert ((tmp_path / "a" / "clitest" / "trajectory.csv").read_bytes()
            != (tmp_path / "b" / "clitest" / "trajectory.csv").read_bytes())


def test_shipped_configs_parse():
    here = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in ("certified_scalar.json", "uncontrolled_scalar.json"):
        cfg = parse_config(os.path.join(here, name))
        assert cfg.provenance["generator_valid"]
