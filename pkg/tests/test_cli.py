import csv
import json
import math

import numpy as np
import pytest

from qcstoch.cli import main

BASE_PARAMS = {"M": 100, "lambda": 1, "kT": 0.004999995, "sigma": 50, "duration": math.pi, "dt": math.pi / 200}
CAT = {"kind": "packets", "packets": [
    {"amplitude": math.sqrt(0.3), "q0": -6, "s": math.sqrt(0.5)},
    {"amplitude": math.sqrt(0.7), "q0": 6, "s": math.sqrt(0.5)}]}


def _write(tmp_path, name, cfg, raw=None):
    path = tmp_path / name
    path.write_text(raw if raw is not None else json.dumps(cfg, indent=2))
    return str(path)


def _cfg(**kw):
    cfg = {"schema_version": 1, "params": dict(BASE_PARAMS), "state": CAT, "engine": "phase-space",
           "n_runs": 200, "seed": 11}
    cfg.update(kw)
    return cfg


def test_simulate_writes_artifacts_and_is_deterministic(tmp_path, capsys):
    c = _write(tmp_path, "a.json", _cfg())
    assert main(["simulate", "--config", c, "--out", str(tmp_path / "o1"), "--threads", "1"]) == 0
    assert main(["simulate", "--config", c, "--out", str(tmp_path / "o2"), "--threads", "2"]) == 0
    for f in ("manifest.json", "summary.json", "paths.csv", "runs.csv", "histograms.csv", "schema.json"):
        assert (tmp_path / "o1" / f).exists()
    assert (tmp_path / "o1" / "summary.json").read_bytes() == (tmp_path / "o2" / "summary.json").read_bytes()
    man = json.loads((tmp_path / "o1" / "manifest.json").read_text())
    summ = json.loads((tmp_path / "o1" / "summary.json").read_text())
    assert man["config_hash"] == summ["config_hash"]
    assert len(man["seeds"]) == 200
    assert sum(summ["branch_fractions"]) == pytest.approx(1.0)


def test_seed_and_run_overrides(tmp_path):
    c = _write(tmp_path, "a.json", _cfg())
    assert main(["simulate", "--config", c, "--out", str(tmp_path / "o"), "--seed", "5", "--n-runs", "17"]) == 0
    with open(tmp_path / "o" / "runs.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 17
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["master_seed"] == 5


def test_meanfield_zero_coupling_free_particle(tmp_path):
    cfg = {"schema_version": 1, "params": {"M": 2, "lambda": 0, "duration": 3, "dt": 0.01},
           "state": {"kind": "coherent", "alpha": 1.0}, "classical": {"Q0": 1.0, "P0": 0.4},
           "engine": "meanfield", "grid": {"q_min": -12, "q_max": 12, "n": 256}}
    c = _write(tmp_path, "mf.json", cfg)
    assert main(["simulate", "--config", c, "--out", str(tmp_path / "o")]) == 0
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["final_Q_mean"] == pytest.approx(1.0 + 0.2 * 3.0, abs=1e-12)


def test_invalid_value_gives_line_anchored_error(tmp_path, capsys):
    cfg = _cfg()
    cfg["params"]["M"] = -1
    text = json.dumps(cfg, indent=2)
    c = _write(tmp_path, "bad.json", None, raw=text)
    assert main(["simulate", "--config", c]) == 2
    err = capsys.readouterr().err
    line = next(i for i, ln in enumerate(text.splitlines(), 1) if '"M": -1' in ln)
    assert f"bad.json:{line}:" in err and "params/M" in err


def test_invalid_json_and_unknown_key(tmp_path, capsys):
    c = _write(tmp_path, "broken.json", None, raw='{\n  "schema_version": 1,\n  "params": {,\n}')
    assert main(["simulate", "--config", c]) == 2
    assert "broken.json:3:" in capsys.readouterr().err
    c = _write(tmp_path, "extra.json", _cfg(bogus=1))
    assert main(["simulate", "--config", c]) == 2
    assert "bogus" in capsys.readouterr().err


def test_under_resolved_step_is_a_config_error(tmp_path, capsys):
    cfg = _cfg()
    cfg["params"]["dt"] = 0.5
    text = json.dumps(cfg, indent=2)
    c = _write(tmp_path, "dt.json", None, raw=text)
    assert main(["simulate", "--config", c, "--out", str(tmp_path / "o")]) == 2
    line = next(i for i, ln in enumerate(text.splitlines(), 1) if '"dt": 0.5' in ln)
    err = capsys.readouterr().err
    assert f"dt.json:{line}: params/dt" in err and "use dt <=" in err


def test_runtime_failure_exit_1_with_replay_seed(tmp_path, capsys):
    cfg = {"schema_version": 1, "params": {"M": 100, "lambda": 1, "kT": 5e-5, "sigma": 50, "duration": 1,
                                           "dt": 0.001},
           "state": {"kind": "packets", "packets": [{"q0": -4, "s": 0.7071}, {"q0": 4, "s": 0.7071}]},
           "engine": "sse", "grid": {"q_min": -18, "q_max": 18, "n": 256}, "n_runs": 2, "seed": 1}
    c = _write(tmp_path, "sse.json", cfg)
    assert main(["simulate", "--config", c, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "replay: run" in err and "seed" in err


def test_wigner_outputs(tmp_path):
    c = _write(tmp_path, "w.json", _cfg())
    assert main(["wigner", "--config", c, "--out", str(tmp_path / "w")]) == 0
    rep = json.loads((tmp_path / "w" / "wigner_report.json").read_text())
    assert rep["raw_min"] < 0
    assert rep["smeared_min"] >= -1e-10 and rep["smeared_positive"]
    assert rep["smeared_normalization"] == pytest.approx(1.0, abs=1e-8)
    data = np.loadtxt(tmp_path / "w" / "wigner.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == 4


def test_wigner_ground_state_nonnegative(tmp_path):
    c = _write(tmp_path, "g.json", _cfg(state={"kind": "coherent", "alpha": 0.0}))
    assert main(["wigner", "--config", c, "--out", str(tmp_path / "g")]) == 0
    rep = json.loads((tmp_path / "g" / "wigner_report.json").read_text())
    assert rep["raw_min"] >= -1e-10
    assert rep["raw_normalization"] == pytest.approx(1.0, abs=1e-8)


def test_compare_identical_configs(tmp_path):
    c = _write(tmp_path, "a.json", _cfg(n_runs=100))
    assert main(["compare", "--config", c, "--config", c, "--out", str(tmp_path / "c")]) == 0
    with open(tmp_path / "c" / "compare.csv") as fh:
        rows = list(csv.DictReader(fh))
    div = next(r for r in rows if r["quantity"] == "divergence_AB")
    assert float(div["value"]) == 0.0
    fr = [r for r in rows if r["quantity"] == "branch_fraction"]
    assert len(fr) == 2 and all(r["value"] == r["value_b"] for r in fr)


def test_compare_sweep_rows(tmp_path):
    cfg = {"schema_version": 1, "params": {"M": 10, "lambda": 0.4, "sigma": 50, "kT": 0.015995, "duration": 2,
                                           "dt": 0.01},
           "state": {"kind": "coherent", "alpha": 1.0}, "classical": {"P0": 0.5},
           "grid": {"q_min": -12, "q_max": 12, "n": 256}, "compare": {"sweep": [0.4, 0.2]}, "n_runs": 50}
    c = _write(tmp_path, "s.json", cfg)
    assert main(["compare", "--config", c, "--out", str(tmp_path / "c")]) == 0
    with open(tmp_path / "c" / "compare.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["quantity"] == "D_lambda"]
    assert [float(r["lambda"]) for r in rows] == [0.4, 0.2]


def test_bad_flags(tmp_path, capsys):
    c = _write(tmp_path, "a.json", _cfg())
    assert main(["simulate", "--config", c, "--n-runs", "0"]) == 2
    assert main(["simulate", "--config", c, "--config", c]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
