"""Command-line front-end: configs, exit codes, files, determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from sf_sampler.cli import main
from sf_sampler.config import ConfigError, load_config

MINI = """
[target]
name = "gaussian"
mean = 0.0
dim = 1
variance = 1.0

[grid]
T = 1.0
n = 8

[drift]
mode = "exact_gaussian"

[run]
ensemble_size = 400
master_seed = 7
out_dir = "{out}"

[metrics]
reference_size = 2000
bootstrap = 20
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------

def test_load_config_happy_path(tmp_path):
    cfg = load_config(_write(tmp_path, MINI.format(out=tmp_path / "o")))
    assert cfg.run.ensemble_size == 400
    assert cfg.run.grid.n == 8
    assert cfg.base_target.dim == 1
    assert cfg.n_list == [8]


def test_unknown_key_is_error(tmp_path):
    bad = MINI.format(out=tmp_path) + "\n[drift]\nepsilonn = 0.1\n"
    # tomllib rejects the duplicate table; use a fresh unknown key instead
    bad = MINI.format(out=tmp_path).replace("mode =", "modee =")
    with pytest.raises(ConfigError) as err:
        load_config(_write(tmp_path, bad))
    assert "modee" in str(err.value)


def test_unknown_section_is_error(tmp_path):
    bad = MINI.format(out=tmp_path) + "\n[plotting]\nstyle = 'x'\n"
    with pytest.raises(ConfigError, match="plotting"):
        load_config(_write(tmp_path, bad))


def test_missing_required(tmp_path):
    bad = MINI.format(out=tmp_path).replace('master_seed = 7', "")
    with pytest.raises(ConfigError, match="master_seed"):
        load_config(_write(tmp_path, bad))


def test_wrong_type(tmp_path):
    bad = MINI.format(out=tmp_path).replace("ensemble_size = 400", 'ensemble_size = "many"')
    with pytest.raises(ConfigError, match="ensemble_size"):
        load_config(_write(tmp_path, bad))


def test_bad_epsilon(tmp_path):
    bad = MINI.format(out=tmp_path).replace('name = "gaussian"', 'name = "gaussian"\nepsilon = 1.5')
    with pytest.raises(ConfigError, match="epsilon"):
        load_config(_write(tmp_path, bad))


def test_unknown_target(tmp_path):
    bad = MINI.format(out=tmp_path).replace('"gaussian"', '"cauchy"')
    with pytest.raises(ConfigError, match="cauchy"):
        load_config(_write(tmp_path, bad))


# ---------------------------------------------------------------------------
# sample command
# ---------------------------------------------------------------------------

def test_sample_writes_outputs(tmp_path):
    out = tmp_path / "out"
    code = main(["sample", "--config", _write(tmp_path, MINI.format(out=out)),
                 "--format", "both"])
    assert code == 0
    csv = (out / "sample.csv").read_text().splitlines()
    assert csv[0].startswith("# sf-sampler v") and "seed=7" in csv[0]
    assert len(csv) == 2 + 400
    assert (out / "sample.bin").exists()
    assert (out / "metrics.csv").exists()
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["seed"] == 7
    assert prov["config"]["run"]["ensemble_size"] == 400


def test_sample_rerun_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, MINI.format(out=tmp_path / "a"))
    assert main(["sample", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["sample", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/sample.csv").read_bytes() == (tmp_path / "b/sample.csv").read_bytes()


def test_sample_threads_do_not_change_bytes(tmp_path):
    cfg = _write(tmp_path, MINI.format(out=tmp_path))
    main(["sample", "--config", cfg, "--out", str(tmp_path / "t1"), "--threads", "1",
          "--format", "both"])
    main(["sample", "--config", cfg, "--out", str(tmp_path / "t8"), "--threads", "8",
          "--format", "both"])
    assert (tmp_path / "t1/sample.csv").read_bytes() == (tmp_path / "t8/sample.csv").read_bytes()
    assert (tmp_path / "t1/sample.bin").read_bytes() == (tmp_path / "t8/sample.bin").read_bytes()


def test_provenance_round_trip(tmp_path):
    cfg = _write(tmp_path, MINI.format(out=tmp_path / "a"))
    assert main(["sample", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    prov = str(tmp_path / "a" / "provenance.json")
    assert main(["sample", "--config", prov, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/sample.csv").read_bytes() == (tmp_path / "b/sample.csv").read_bytes()


def test_unknown_key_exit_code_and_anchor(tmp_path, capsys):
    bad = MINI.format(out=tmp_path).replace("variance =", "variancee =")
    path = _write(tmp_path, bad)
    assert main(["sample", "--config", path]) == 2
    msg = capsys.readouterr().err
    assert "variancee" in msg
    assert ":" in msg.split(" ")[0]  # file:line anchor


def test_missing_config_file(tmp_path):
    assert main(["sample", "--config", str(tmp_path / "absent.toml")]) == 2


def test_degenerate_run_exit_3(tmp_path, capsys):
    # compact support with eps = 0 and the score-free estimator: paths that
    # wander off the support hit degenerate batches
    cfg = """
[target]
name = "triangular_kde"
centers = [0.0]
bandwidth = 0.3

[grid]
T = 1.0
n = 16

[drift]
mode = "stein"
mc_batch = 16
terminal_policy = "last_interior"

[run]
ensemble_size = 300
master_seed = 3
out_dir = "{out}"
"""
    out = tmp_path / "deg"
    code = main(["sample", "--config", _write(tmp_path, cfg.format(out=out))])
    assert code == 3
    assert (out / "sample.csv").exists()  # outputs still written
    assert "degenera" in capsys.readouterr().err.lower()


# ---------------------------------------------------------------------------
# sweep command
# ---------------------------------------------------------------------------

SWEEP = """
[target]
name = "gaussian_mixture"
weights = [0.5, 0.5]
means = [-2.0, 2.0]

[grid]
T = 1.0
n_list = [4, 16]

[drift]
mode = "oracle"

[run]
ensemble_size = 4000
master_seed = 11
out_dir = "{out}"
formats = []

[metrics]
reference_size = 40000
bootstrap = 30
"""


def test_sweep_metrics_csv(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", _write(tmp_path, SWEEP.format(out=out))])
    assert code == 0
    lines = (out / "sweep_metrics.csv").read_text().splitlines()
    assert lines[0] == "n,epsilon,K,M,w1,mc_se,tv_hist,mean_err_max,cov_err"
    assert len(lines) == 3
    w1s = [float(line.split(",")[4]) for line in lines[1:]]
    ses = [float(line.split(",")[5]) for line in lines[1:]]
    import sf_sampler as sf

    assert sf.trend_non_increasing(w1s, ses)


def test_sweep_empty_n_list_exit_2(tmp_path):
    bad = SWEEP.format(out=tmp_path).replace("n_list = [4, 16]", "n_list = []")
    assert main(["sweep", "--config", _write(tmp_path, bad)]) == 2


# ---------------------------------------------------------------------------
# oracle-check command
# ---------------------------------------------------------------------------

ORACLE = """
[target]
name = "gaussian"
mean = 0.0
dim = 1
variance = 0.25

[grid]
T = 1.0
n = 8

[drift]
mode = "gradient_ratio"

[run]
ensemble_size = 10
master_seed = 5
out_dir = "{out}"

[oracle_check]
t_points = 4
y_points = 4
mc_batch = 1024
batches = 6
"""


def test_oracle_check_passes(tmp_path):
    out = tmp_path / "oc"
    code = main(["oracle-check", "--config", _write(tmp_path, ORACLE.format(out=out))])
    assert code == 0
    lines = (out / "oracle_check.csv").read_text().splitlines()
    assert lines[0].startswith("t,y,oracle")
    assert len(lines) == 1 + 16
    assert all(line.endswith(",1") for line in lines[1:])  # all points pass


def test_oracle_check_flat_target_zero_error(tmp_path):
    cfg = ORACLE.format(out=tmp_path / "oc0").replace("variance = 0.25", "variance = 1.0")
    out = tmp_path / "oc0"
    assert main(["oracle-check", "--config", _write(tmp_path, cfg)]) == 0
    for line in (out / "oracle_check.csv").read_text().splitlines()[1:]:
        assert float(line.split(",")[7]) == 0.0  # abs_err exactly zero


def test_oracle_check_stein_at_terminal_rejected(tmp_path):
    cfg = ORACLE.format(out=tmp_path) \
        .replace('mode = "gradient_ratio"', 'mode = "stein"') \
        .replace("t_points = 4", "t_list = [0.5, 1.0]\nt_points = 4")
    assert main(["oracle-check", "--config", _write(tmp_path, cfg)]) == 2


# ---------------------------------------------------------------------------
# probe command
# ---------------------------------------------------------------------------

def test_probe_outputs_json(tmp_path, capsys):
    cfg = """
[target]
name = "gaussian_mixture"
weights = [0.5, 0.5]
means = [-2.0, 2.0]

[grid]
T = 1.0
n = 4

[run]
ensemble_size = 10
master_seed = 0

[probe]
pairs = 3000
"""
    assert main(["probe", "--config", _write(tmp_path, cfg)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert 1.7 <= doc["lipschitz_logphi_est"] <= 2.0 + 1e-9
    assert doc["a2_certified"] is True
    assert np.isfinite(doc["a4_ratio_est"])


def test_console_entry_point(tmp_path):
    # the documented invocation path: python -m sf_sampler.cli
    cfg = _write(tmp_path, MINI.format(out=tmp_path / "ep"))
    res = subprocess.run(
        [sys.executable, "-m", "sf_sampler.cli", "sample", "--config", cfg],
        capture_output=True, text=True,
    )
    assert res.returncode == 0
