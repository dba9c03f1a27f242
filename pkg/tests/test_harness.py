from __future__ import annotations

import csv
import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from diffnet.cli import main
from diffnet.harness import ConfigError, ExperimentConfig, check_replay, cmd_check, cmd_policy, cmd_run, cmd_sweep
from diffnet.harness.commands import write_escape_plot
from diffnet.stationarity import escape_scaling_fit
from diffnet.topology import NoiseProfile, build_graph, uniform_policy, write_policy_csv

SVG = "{http://www.w3.org/2000/svg}"

SADDLE_SWEEP = {
    "loss": {"kind": "quadratic", "diag": [1.0, -1.0]},
    "agents": [1, 2, 4],
    "mu": 1e-3,
    "noise": {"sigma_iso": 0.1},
    "classifier": {"epsilon_drop": 0.05},
    "seeds": list(range(6)),
    "max_iters": 50_000,
}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def metrics_rows(path):
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def polylines(path):
    return ET.parse(path).getroot().findall(f"{SVG}polyline")


# --------------------------------------------------------------------------- config


def test_defaults_and_overrides(tmp_path):
    cfg = ExperimentConfig.load(write_config(tmp_path, {"mu": 0.01}), {"agents": [3], "out": "x"})
    assert cfg.raw["mu"] == 0.01
    assert cfg.agents == [3]
    assert cfg.raw["loss"]["M"] == 2


def test_config_hash_ignores_output_location(tmp_path):
    a = ExperimentConfig.load(None, {"out": str(tmp_path / "a"), "workers": 4})
    b = ExperimentConfig.load(None, {"out": str(tmp_path / "b")})
    c = ExperimentConfig.load(None, {"mu": 1e-3})
    assert a.hash == b.hash != c.hash


@pytest.mark.parametrize("bad", [
    {"agents": []},
    {"seeds": [1, 1]},
    {"mu": -1.0},
    {"policy": "missing.csv"},
    {"noise": {"profile": "missing.json"}},
])
def test_config_invariants(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(None, bad)


def test_replay_mismatch_detected(tmp_path):
    doc = {"loss": {"kind": "quadratic", "diag": [1.0]}, "agents": [1], "normalize": False,
           "noise": {"sigma_iso": 0.0}, "start": [1.0], "mu": 0.1, "iters": 5, "out": str(tmp_path)}
    cfg = ExperimentConfig.load(None, doc)
    cmd_run(cfg)
    assert check_replay(tmp_path / "metrics.csv", cfg)
    assert check_replay(tmp_path / "run_summary.json", cfg)
    other = ExperimentConfig.load(None, {**doc, "mu": 0.2})
    assert not check_replay(tmp_path / "metrics.csv", other)


# --------------------------------------------------------------------------- policy


def test_cmd_policy_uniform_complete(tmp_path):
    cfg = ExperimentConfig.load(None, {"agents": [4], "out": str(tmp_path),
                                       "noise": {"sigma_iso": 0.5}, "loss": {"kind": "quadratic", "diag": [1.0]}})
    out = cmd_policy(cfg)
    assert out["objective"] == pytest.approx(0.25 * 0.25)
    assert out["lambda2"] == pytest.approx(0.0, abs=1e-12)
    assert (tmp_path / "policy.csv").exists()


def test_cmd_policy_mh_heterogeneous(tmp_path):
    prof = NoiseProfile(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    (tmp_path / "noise.json").write_text(prof.to_json())
    cfg_path = write_config(tmp_path, {"agents": [2], "policy": "mh", "noise": {"profile": "noise.json"},
                                       "out": str(tmp_path / "o")})
    out = cmd_policy(ExperimentConfig.load(cfg_path))
    assert out["objective"] == pytest.approx(6 / 9, abs=1e-10)
    assert out["uniform_objective"] == pytest.approx(3 / 4, abs=1e-12)
    assert out["objective"] < out["uniform_objective"]


def test_cli_policy_invalid_file_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    write_policy_csv(bad, np.array([[0.6, 0.5], [0.6, 0.5]]))
    code = main(["policy", "--policy", str(bad), "--agents", "2", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "column-sum: FAIL" in capsys.readouterr().err


# --------------------------------------------------------------------------- run


def test_cmd_run_gradient_descent(tmp_path):
    cfg = ExperimentConfig.load(None, {
        "loss": {"kind": "quadratic", "diag": [1.0, 2.0]}, "agents": [1], "mu": 0.1, "normalize": False,
        "noise": {"sigma_iso": 0.0}, "start": [1.0, -2.0], "iters": 1000, "out": str(tmp_path)})
    rec = cmd_run(cfg)
    J = [float(r[1]) for r in rec.rows]
    assert all(b < a for a, b in zip(J, J[1:]) if a > 0)
    assert float(rec.rows[-1][2]) <= 1e-12
    assert all(r[4] == "-" for r in rec.rows)


def test_cmd_run_escape_flag_matches_escape_iter(tmp_path):
    cfg = ExperimentConfig.load(None, {"agents": [4], "iters": 1500, "out": str(tmp_path)})
    rec = cmd_run(cfg)
    assert rec.escape_iter is not None
    rows = metrics_rows(tmp_path / "metrics.csv")
    flags = [int(r["escaped_flag"]) for r in rows]
    first = flags.index(1)
    assert int(rows[first]["iter"]) == rec.escape_iter
    assert all(flags[first:]) and not any(flags[:first])
    assert rows[0]["region"] == "H"


def test_cmd_run_cadence_rows(tmp_path):
    cfg = ExperimentConfig.load(None, {"agents": [2], "iters": 95, "cadence": 10, "out": str(tmp_path)})
    cmd_run(cfg)
    rows = metrics_rows(tmp_path / "metrics.csv")
    assert len(rows) == math.ceil(95 / 10)
    iters = [int(r["iter"]) for r in rows]
    assert iters == sorted(set(iters))


def test_cmd_run_baselines(tmp_path):
    cfg = ExperimentConfig.load(None, {"agents": [4], "iters": 50, "baselines": True, "out": str(tmp_path)})
    rec = cmd_run(cfg)
    assert len(rec.baseline_rows) == 50
    assert (tmp_path / "baselines.csv").read_text().startswith("# config_hash=")


def test_cmd_run_is_byte_reproducible(tmp_path):
    texts = []
    for j in range(2):
        cfg = ExperimentConfig.load(None, {"agents": [4], "iters": 300, "seeds": [7], "out": str(tmp_path / str(j))})
        cmd_run(cfg)
        texts.append((tmp_path / str(j) / "metrics.csv").read_bytes())
    assert texts[0] == texts[1]


def test_cli_divergence_exit_3(tmp_path):
    cfg = write_config(tmp_path, {"loss": {"kind": "quadratic", "diag": [1.0]}, "normalize": False,
                                  "noise": {"sigma_iso": 0.0}, "start": [1.0], "mu": 3.0, "iters": 200})
    code = main(["run", "--config", str(cfg), "--agents", "1", "--out", str(tmp_path / "o")])
    assert code == 3
    assert (tmp_path / "o" / "metrics.csv").exists()
    assert json.loads((tmp_path / "o" / "run_summary.json").read_text())["status"] == "diverged"


# --------------------------------------------------------------------------- sweep


def test_synthetic_scaling_and_plot(tmp_path):
    slope, _ = escape_scaling_fit([1, 2, 4], [100, 50, 25])
    assert slope == pytest.approx(-1.0)
    write_escape_plot(tmp_path / "e.svg", {"uniform": ([1, 2, 4], [100.0, 50.0, 25.0])})
    root = ET.parse(tmp_path / "e.svg").getroot()
    lines = root.findall(f"{SVG}polyline")
    assert len(lines) == 1
    assert len(lines[0].get("points").split()) == 3


def test_cmd_sweep_outputs(tmp_path):
    cfg = ExperimentConfig.load(None, {**SADDLE_SWEEP, "out": str(tmp_path)})
    res = cmd_sweep(cfg)
    assert len(polylines(tmp_path / "trajectories.svg")) == 3
    assert len(polylines(tmp_path / "escape_vs_K.svg")) == 1
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config_hash"] == cfg.hash
    assert "slope" in summary["fits"]["uniform"]
    rows = metrics_rows(tmp_path / "escape.csv")
    assert len(rows) == 3 * 6
    assert res.stats[("uniform", 4)].median < res.stats[("uniform", 1)].median


def test_cmd_sweep_byte_identical_across_workers(tmp_path):
    outs = []
    for workers in (1, 3):
        out = tmp_path / f"w{workers}"
        cmd_sweep(ExperimentConfig.load(None, {**SADDLE_SWEEP, "workers": workers, "out": str(out)}))
        outs.append(out)
    for name in ("escape.csv", "trajectories.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_cmd_sweep_all_censored_skips_fit(tmp_path):
    doc = {**SADDLE_SWEEP, "max_iters": 20, "out": str(tmp_path)}
    with pytest.warns(UserWarning):
        res = cmd_sweep(ExperimentConfig.load(None, doc))
    assert "skipped" in res.fits["uniform"]


# --------------------------------------------------------------------------- check


def test_cli_check_default_passes(tmp_path, capsys):
    assert main(["check", "--quick", "--agents", "4", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("[PASS]") == 9


def test_cli_check_large_step_fails_classifier(tmp_path, capsys):
    code = main(["check", "--quick", "--agents", "1", "--mu", "0.5", "--no-normalize", "--out", str(tmp_path)])
    assert code == 1
    out = capsys.readouterr().out
    assert "[FAIL] classifier-params" in out


def test_check_transposed_policy_fails_centroid_identity(tmp_path):
    g = build_graph("star", 4)
    A = uniform_policy(g).A
    write_policy_csv(tmp_path / "t.csv", A.T)
    cfg = ExperimentConfig.load(None, {"agents": [4], "topology": {"kind": "star"}, "policy": str(tmp_path / "t.csv"),
                                       "out": str(tmp_path)})
    results = {r.name: r for r in cmd_check(cfg, quick=True)}
    assert not results["policy-constraints"].passed
    assert not results["centroid-identity"].passed


def test_cli_bad_config_exit_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", "--config", str(path)]) == 2
    grid = write_config(tmp_path, {"topology": {"kind": "grid", "rows": 2}})
    assert main(["run", "--config", str(grid), "--agents", "5", "--out", str(tmp_path)]) == 2
    noiseless = write_config(tmp_path, {"noise": {"sigma_iso": 0.0}}, "noiseless.json")
    assert main(["policy", "--config", str(noiseless), "--policy", "mh", "--agents", "2"]) == 2
