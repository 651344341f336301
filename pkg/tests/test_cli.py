import json
import os
import subprocess
import sys

import pytest

from rotorlattice import __version__
from rotorlattice.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from rotorlattice.config import SCHEMA, ConfigError, RunConfig

MINIMAL = """
[lattice]
N = 1
L = 16
[model]
b = 1.0
[measure]
r = 1.0
[integrator]
scheme = split_exact
dt = 0.01
[run]
T = 1
ntraj = 100
seed = 7
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text + f"\n[output]\ndir = {tmp_path}\n")
    return str(path)


def read_csv(path):
    lines = open(path).read().splitlines()
    assert lines[0].startswith("# config_hash=") and "seed=" in lines[0]
    return lines[1].split(","), [l.split(",") for l in lines[2:]]


def test_simulate_minimal_and_rerun_is_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL)
    assert main(["simulate", cfg]) == EXIT_OK
    header, rows = read_csv(tmp_path / "simulate.csv")
    assert header == ["t", "observable", "mean", "var", "stderr"]
    assert {r[1] for r in rows} == {"x0", "x0^2", "V"}
    first = (tmp_path / "simulate.csv").read_bytes()
    summary = json.loads((tmp_path / "simulate.json").read_text())
    assert summary["seed"] == 7 and summary["max_rel_V_drift"] < 1e-12
    assert main(["simulate", cfg]) == EXIT_OK
    assert (tmp_path / "simulate.csv").read_bytes() == first


def test_numeric_format_is_17_digits(tmp_path):
    main(["simulate", write(tmp_path, MINIMAL)])
    _, rows = read_csv(tmp_path / "simulate.csv")
    for r in rows:
        for v in r[2:]:
            assert float(format(float(v), ".17g")) == float(v)


@pytest.mark.parametrize("patch,key", [
    (("ntraj = 100", "ntraj = 0"), "run.ntraj"),
    (("seed = 7", ""), "run.seed"),
    (("dt = 0.01", "dt = 0.01\nfoo = 1"), "integrator.foo"),
    (("scheme = split_exact", "scheme = leapfrog"), "integrator.scheme"),
    (("L = 16", "L = 15"), "L"),
    (("T = 1", "T = 1.005"), "run.T"),
    (("b = 1.0", "b = one"), "model.b"),
])
def test_config_errors_exit_2_naming_the_key(tmp_path, capsys, patch, key):
    cfg = write(tmp_path, MINIMAL.replace(*patch))
    assert main(["simulate", cfg]) == EXIT_CONFIG
    assert key in capsys.readouterr().err


def test_unknown_section_and_missing_file(tmp_path, capsys):
    assert main(["simulate", write(tmp_path, MINIMAL + "\n[plot]\nx = 1\n")]) == EXIT_CONFIG
    assert "plot" in capsys.readouterr().err
    assert main(["simulate", str(tmp_path / "nope.ini")]) == EXIT_CONFIG


def test_every_key_has_a_default_except_seed():
    missing = [f"{s}.{k}" for s, keys in SCHEMA.items() for k, (_, d) in keys.items() if not isinstance(d, (int, float, str))]
    assert missing == ["run.seed"]
    cfg = RunConfig.from_text("[run]\nseed = 1\n")
    assert cfg["lattice.N"] == 1 and cfg["integrator.scheme"] == "split_exact"
    with pytest.raises(ConfigError):
        RunConfig.from_text("")


def test_hash_ignores_output_and_threads():
    a = RunConfig.from_text("[run]\nseed = 1\nthreads = 2\n[output]\ndir = /tmp/a\n")
    b = RunConfig.from_text("[run]\nseed = 1\n")
    c = RunConfig.from_text("[run]\nseed = 2\n")
    assert a.hash == b.hash != c.hash


def test_oracle_tasks(tmp_path):
    cfg = write(tmp_path, MINIMAL + "\n[oracle]\nt = 0\nf = V\ntimes = 0, 1, 5\n")
    assert main(["oracle", cfg, "--task", "constantA"]) == EXIT_OK
    _, rows = read_csv(tmp_path / "oracle_constantA.csv")
    vals = {r[1]: float(r[2]) for r in rows}
    assert vals["A_limit"] == pytest.approx(0.28209479177387814, abs=1e-15)
    assert vals["A"] == pytest.approx(0.33150746674549, abs=1e-12)
    assert main(["oracle", cfg, "--task", "heat"]) == EXIT_OK
    _, rows = read_csv(tmp_path / "oracle_heat.csv")
    assert [float(r[2]) for r in rows] == [1.0] + [0.0] * 15
    assert main(["oracle", cfg, "--task", "quadratic"]) == EXIT_OK
    _, rows = read_csv(tmp_path / "oracle_quadratic.csv")
    means = [float(r[2]) for r in rows if r[1] == "mean"]
    assert max(means) - min(means) <= 1e-12 and len(means) == 3


def test_oracle_quadratic_x0_squared(tmp_path):
    cfg = write(tmp_path, MINIMAL + "\n[oracle]\ntimes = 0, 1\n")
    main(["oracle", cfg, "--task", "quadratic"])
    _, rows = read_csv(tmp_path / "oracle_quadratic.csv")
    got = {(float(r[0]), r[1]): float(r[2]) for r in rows}
    assert got[(0.0, "mean")] == 1.0 and got[(0.0, "var")] == 2.0
    # Var(P_1 x0^2) = 2 p_2(0) = 2 e^-4 I_0(4)
    assert got[(1.0, "var")] == pytest.approx(2 * 0.20700192122398664, rel=1e-9)


def test_check_conservation_and_decay(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL.replace("ntraj = 100", "ntraj = 2000"))
    assert main(["check", cfg, "--suite", "conservation"]) == EXIT_OK
    rep = json.loads((tmp_path / "check_conservation.json").read_text())[0]
    assert rep["status"] == "pass" and rep["measured"]["max_rel_V_drift"] <= 1e-12
    assert rep["seed"] == 7 and len(rep["config_hash"]) == 16
    assert main(["check", cfg, "--suite", "decay"]) == EXIT_OK
    rep = json.loads((tmp_path / "check_decay.json").read_text())[0]
    assert rep["measured"]["oracle_fit"]["exponent"] == pytest.approx(-0.5, abs=0.05)
    assert rep["measured"]["mc_consistent"] is True
    assert "pass   decay" in capsys.readouterr().out


def test_deliberate_coarse_step_fails_informatively(tmp_path, capsys):
    text = MINIMAL.replace("dt = 0.01", "dt = 1.0").replace("ntraj = 100", "ntraj = 10000\nepochs = 1")
    cfg = write(tmp_path, text)
    assert main(["check", cfg, "--suite", "decay"]) == EXIT_FAIL
    rep = json.loads((tmp_path / "check_decay.json").read_text())[0]
    assert rep["status"] == "fail" and rep["measured"]["mc_consistent"] is False
    assert any("coarse step" in f for f in rep["flags"])
    assert "fail   decay" in capsys.readouterr().out


def test_em_conservation_is_report_only(tmp_path):
    cfg = write(tmp_path, MINIMAL.replace("scheme = split_exact", "scheme = em_ito"))
    assert main(["check", cfg, "--suite", "conservation"]) == EXIT_OK
    rep = json.loads((tmp_path / "check_conservation.json").read_text())[0]
    assert rep["status"] == "report" and rep["measured"]["max_rel_V_drift"] > 0


def test_version_subcommand_and_module_entry(capsys):
    assert main(["version"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == __version__
    out = subprocess.run([sys.executable, "-m", "rotorlattice", "version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == __version__


def test_thread_env_does_not_change_output(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    blobs = []
    for threads in ("1", "2"):
        env = dict(os.environ, ROTORLATTICE_THREADS=threads, NUMBA_NUM_THREADS="2")
        subprocess.run([sys.executable, "-m", "rotorlattice", "simulate", cfg], check=True, env=env,
                       capture_output=True)
        blobs.append((tmp_path / "simulate.csv").read_bytes())
    assert blobs[0] == blobs[1]
