import json
import subprocess
import sys

import numpy as np
import pytest

from dilute_viscosity.cli import OUTPUT_ENV, builtin_checks, main, parse_args, read_g2_csv
from dilute_viscosity.point_process import read_config, write_config, Domain, PointConfiguration
from dilute_viscosity.two_sphere import PairTable


@pytest.fixture(autouse=True)
def _no_env(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)


def _json(path):
    return json.loads(path.read_text())


def test_builtin_checks_pass():
    checks = builtin_checks()
    assert len(checks) == 3 and all(ok for _, ok, _ in checks)


def test_validate_command(tmp_path, capsys):
    rc = main(["validate", "--builtin", "--output-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("PASS") == 3 and "FAIL" not in out
    doc = _json(tmp_path / "validate.json")
    assert doc["schema_version"] == 1
    assert doc["config"]["quad_order"] == 20
    assert (tmp_path / "validate.csv").read_text().startswith("# ")


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[mu2]\nbogus = 3\n")
    assert main(["mu2", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err
    cfg.write_text("[nonsense]\nr0 = 3\n")
    assert main(["mu2", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[common]\noutput_dir = {tmp_path / 'from_file'}\nseed = 7\n"
                   "[finite-n]\nL = 12\nconfigs = 4\n")
    args = parse_args(["finite-n", "--config", str(cfg), "--configs", "2"])
    assert args.L == 12.0 and args.configs == 2 and args.seed == 7
    assert args.output_dir == str(tmp_path / "from_file")
    args = parse_args(["finite-n", "--config", str(cfg), "--output-dir", "x"])
    assert args.output_dir == "x"


def test_env_output_dir(tmp_path, monkeypatch):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[common]\noutput_dir = from_file\n")
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert parse_args(["mu2", "--config", str(cfg)]).output_dir == str(tmp_path / "env")
    assert parse_args(["mu2", "--output-dir", "flag"]).output_dir == "flag"


def test_bad_values_exit_2(tmp_path):
    assert main(["mu2", "--r0", "1.5", "--output-dir", str(tmp_path)]) == 2
    assert main(["mu2", "--g2", "no-such-model", "--output-dir", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["mu2", "--strain", "1,1,1,0,0,0"])


def test_mu2_command_reproducible(tmp_path, capsys):
    argv = ["mu2", "--n", "1e4", "--functional", "both", "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    first = (tmp_path / "mu2.csv").read_bytes()
    assert main(argv) == 0
    assert (tmp_path / "mu2.csv").read_bytes() == first
    out = capsys.readouterr().out
    assert "mu2 S:S" in out and "nu2 S:S" in out
    doc = _json(tmp_path / "mu2.json")
    assert doc["config"]["n"] == 1e4
    assert np.allclose(doc["nu2"]["value"], 2.5 * np.eye(5), atol=1e-8)
    assert "mu2_minus_nu2" in doc
    lines = first.decode().splitlines()
    assert "quantity,i,j,value,error" in lines
    assert any(line.startswith("# n = ") for line in lines)


def test_pointprocess_and_g2_roundtrip(tmp_path, capsys):
    rc = main(["pointprocess", "--matern1", "--trials", "10", "--box", "10",
               "--bins", "0,2.5,3,4,5,6", "--output-dir", str(tmp_path), "--strict"])
    assert rc == 0
    assert "hardcore violations: 0" in capsys.readouterr().out
    est = read_g2_csv(tmp_path / "pointprocess.csv", r0=2.5)
    assert est.g2[0] == 0.0 and len(est.g2) == 5
    rc = main(["mu2", "--g2", str(tmp_path / "pointprocess.csv"), "--n", "1e4",
               "--functional", "mu2", "--output-dir", str(tmp_path)])
    assert rc == 0


def test_pair_table_cache(tmp_path):
    rc = main(["pair-table", "--r-min", "2.1", "--r-max", "20", "--n-grid", "9",
               "--output-dir", str(tmp_path)])
    assert rc == 0
    table = PairTable.load(tmp_path / "pair-table.table")
    ref = PairTable(2.1, 20.0, 9)
    assert np.allclose(table.values, ref.values, rtol=0, atol=1e-15)


def test_finite_n_and_residual_commands(tmp_path, capsys):
    assert main(["finite-n", "--phi", "0.01,0.02", "--L", "8", "--configs", "2",
                 "--method", "dipole", "--output-dir", str(tmp_path)]) == 0
    assert "Einstein slope" in capsys.readouterr().out
    assert main(["residual-scaling", "--phi", "0.01,0.02,0.04", "--n-spheres", "20",
                 "--configs", "2", "--output-dir", str(tmp_path), "--threads", "2"]) == 0
    doc = _json(tmp_path / "residual-scaling.json")
    assert np.isfinite(doc["u_err_slope"]) and doc["config"]["threads"] == 2


def test_config_file_roundtrip(tmp_path):
    cfg = PointConfiguration([[0.0, 0.1, 0.2], [3.0, 0.0, 0.0]], Domain.ball(5.0), r0=2.5, seed=3)
    path = tmp_path / "c.txt"
    write_config(cfg, path)
    back = read_config(path)
    assert np.array_equal(back.centers, cfg.centers)
    assert back.r0 == 2.5 and back.seed == 3 and back.domain.kind == "ball"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dilute_viscosity", "validate", "--builtin",
                           "--output-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.count("PASS") == 3
