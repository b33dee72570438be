import json
import math

import jsonschema
import numpy as np
import pytest

from homopolymer.cli import main
from homopolymer.io import ConfigError, build_config, load_schema, parse_config_text, read_csv, write_csv


def _run(tmp_path, *args, sub="out"):
    out = tmp_path / sub
    code = main([*args, "--out", str(out)])
    return code, out


def _validate(path, schema):
    jsonschema.validate(json.loads(path.read_text()), load_schema(schema))


def test_config_parsing_and_overrides(tmp_path):
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text("# unit well\nshape = well\nradius = 1.5  # wider\nd = 5\npaths = 200\n")
    cfg = build_config(cfg_file, {"d": 3, "seed": 4})
    assert (cfg.radius, cfg.d, cfg.n_paths, cfg.seed) == (1.5, 3, 200, 4)
    assert parse_config_text("beta-grid = 0.001:0.1:5") == {"beta_grid": "0.001:0.1:5"}


@pytest.mark.parametrize("text,field", [("radius = -1", "radius"), ("colour = red", "colour"),
                                        ("d = 7", "d"), ("beta = warm", "beta"),
                                        ("beta_grid = 1:2", "beta_grid"), ("seed = x", "seed"),
                                        ("just text", "line 1")])
def test_config_errors_name_the_field(tmp_path, text, field):
    p = tmp_path / "bad.cfg"
    p.write_text(text + "\n")
    with pytest.raises(ConfigError) as info:
        build_config(p)
    assert info.value.field == field


def test_malformed_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("radius = -1\n")
    code, _ = _run(tmp_path, "critical-beta", "--config", str(p))
    assert code == 2
    assert "radius" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2


def test_csv_roundtrip(tmp_path):
    p = write_csv(tmp_path / "t.csv", [{"a": 0.1, "b": 2}], {"x": np.float64(1.5)}, footer={"k": 1})
    params, rows = read_csv(p)
    assert params == {"x": 1.5} and rows == [{"a": "0.1", "b": "2"}]
    assert p.read_text().splitlines()[-1] == '# fit {"k": 1}'


def test_critical_beta_command(tmp_path, capsys):
    code, out = _run(tmp_path, "critical-beta", "--d", "3")
    assert code == 0
    data = json.loads((out / "critical_beta.json").read_text())
    assert data["beta_cr"] == pytest.approx(math.pi ** 2 / 8, abs=1e-3)
    _validate(out / "critical_beta.json", "critical_beta")
    jsonschema.validate(data["spectral"], load_schema("spectral"))
    assert "beta_cr = 1.2337" in capsys.readouterr().out


def test_low_dimension_note(tmp_path, capsys):
    code, out = _run(tmp_path, "critical-beta", "--d", "1")
    assert code == 0
    data = json.loads((out / "critical_beta.json").read_text())
    assert data["beta_cr"] == 0.0 and "note" in data
    _validate(out / "critical_beta.json", "critical_beta")


def test_scaling_scan_command(tmp_path):
    code, out = _run(tmp_path, "scaling-scan", "--d", "3", "--beta-grid", "0.001:0.1:5")
    assert code == 0
    params, rows = read_csv(out / "scaling_scan.csv")
    assert params["beta_grid"] == "0.001:0.1:5" and len(rows) == 5
    assert set(rows[0]) == {"beta", "excess", "lambda0"}
    fit = json.loads((out / "scaling_scan.csv").read_text().splitlines()[-1][len("# fit "):])
    assert fit["exponent"] == pytest.approx(2.0, abs=0.05)
    _validate(out / "scaling_scan.json", "scaling_scan")


@pytest.mark.parametrize("beta,phase", [("2.0", "globular"), ("0.6", "diffusive")])
def test_partition_command_phases(tmp_path, beta, phase):
    code, out = _run(tmp_path, "partition", "--beta", beta, "--T", "40")
    assert code == 0
    data = json.loads((out / "partition.json").read_text())
    assert data["fit"]["phase"] == phase
    _validate(out / "partition.json", "partition")


def test_simulate_is_byte_identical_on_rerun(tmp_path):
    args = ("simulate", "--beta", "0", "--T", "4", "--paths", "4000", "--seed", "3")
    code1, out1 = _run(tmp_path, *args, sub="a")
    code2, out2 = _run(tmp_path, *args, sub="b")
    assert code1 == code2 == 0
    for name in ("simulate.json", "endpoint_histogram.csv"):
        a, b = (out1 / name).read_bytes(), (out2 / name).read_bytes()
        assert a.replace(b"/a", b"/b") == b
    _validate(out1 / "simulate.json", "simulate")
    data = json.loads((out1 / "simulate.json").read_text())
    last = [r for r in data["covariance"] if r["t"] == 1.0]
    assert all(abs(r["var"] - 1.0) < 3 * r["var_se"] for r in last)


def test_simulate_pinned_mode(tmp_path):
    p = tmp_path / "pin.cfg"
    p.write_text("beta = 0\nT = 4\npaths = 4000\npinned_radius = 1.2\n")
    code, out = _run(tmp_path, "simulate", "--config", str(p))
    assert code == 0
    data = json.loads((out / "simulate.json").read_text())
    assert len(data["pinned"]["second_moment"]) == 3
    _validate(out / "simulate.json", "simulate")


def test_critical_kernel_and_report(tmp_path, capsys):
    code, out = _run(tmp_path, "critical-kernel")
    assert code == 0
    data = json.loads((out / "critical_kernel.json").read_text())
    checks = {c["check"] for c in data["checks"]}
    assert {"normalization", "origin_value", "chapman_kolmogorov", "fokker_planck",
            "fokker_planck_refinement", "near_origin_drift"} <= checks
    assert any(c["params"].get("y") == 0.0 for c in data["checks"] if c["check"] == "normalization")
    _validate(out / "critical_kernel.json", "critical_kernel")
    assert main(["report", "--out", str(out)]) == 0
    _validate(out / "report.json", "report")


@pytest.mark.slow
def test_critical_kernel_refined(tmp_path):
    code, out = _run(tmp_path, "critical-kernel", "--refine")
    assert code == 0
    data = json.loads((out / "critical_kernel.json").read_text())
    fp = [c for c in data["checks"] if c["check"] == "fokker_planck"][0]
    assert fp["params"]["h"] == pytest.approx(5e-4)
