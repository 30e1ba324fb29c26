import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from causalhsp.cli import main

from conftest import WORKED_ASSETS, WORKED_C, WORKED_CANDIDATES

DATA = Path(__file__).resolve().parents[1] / "src" / "causalhsp" / "data"


def run(*argv):
    return main([str(a) for a in argv])


def stderr_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--seed", "1", "--rows", "400", "--out", str(out)]) == 0
    return out


def test_worked_example_scorecard(tmp_path):
    corr = tmp_path / "corr.csv"
    pd.DataFrame(WORKED_C, index=pd.Index(WORKED_CANDIDATES, name="candidate"), columns=WORKED_ASSETS).to_csv(corr)
    assert run("select-drivers", "--correlations", corr, "--m", 2, "--epsilon", 0.5, "--no-screen", "--out", tmp_path) == 0
    card = pd.read_csv(tmp_path / "scorecard.csv")
    assert set(card.loc[card.selected, "candidate"]) == {"X4", "X2"}
    assert card["candidate"].tolist() == ["X4", "X2", "X1", "X3"]
    assert card.set_index("candidate").loc[["X1", "X2", "X3", "X4"], "R"].tolist() == [1, 3, 1, 3]
    sel = json.loads((tmp_path / "selection.json").read_text())
    assert sel["schema_version"] == 1 and sorted(sel["selected"]) == ["X2", "X4"]


def test_missing_input_exits_2_with_path(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert run("optimize", "--method", "minvar", "--returns", missing, "--out", tmp_path) == 2
    err = stderr_json(capsys)
    assert err["error"] == "missing_input" and err["path"] == str(missing)


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[allocation]\nbounds = wide\n")
    assert run("optimize", "--config", cfg, "--out", tmp_path) == 2
    err = stderr_json(capsys)
    assert err["error"] == "config_invalid" and err["details"]["path"] == str(cfg)


def test_module_errors_exit_1(tmp_path, capsys):
    R = pd.DataFrame({"date": ["2020-01-01", "2020-01-02", "2020-01-03"], "A": [0.01, 0.0, 0.02],
                      "B": [0.0, 0.0, 0.0]})
    R.to_csv(tmp_path / "r.csv", index=False)
    assert run("optimize", "--method", "hrp", "--returns", tmp_path / "r.csv", "--bounds", "none", "--out", tmp_path) == 1
    assert "error" in stderr_json(capsys)
    assert not (tmp_path / "weights.csv").exists()


def test_pipeline_stages_compose(synth_dir, tmp_path):
    a, d = synth_dir / "assets.csv", synth_dir / "drivers.csv"
    assert run("select-drivers", "--returns", a, "--drivers", d, "--m", 3, "--epsilon", 0.3, "--out", tmp_path) == 0
    sel = json.loads((tmp_path / "selection.json").read_text())
    assert set(sel["selected"]) == {"MKT", "CL1", "CL2"}
    assert run("fit-sensitivities", "--returns", a, "--drivers", d, "--selection", tmp_path / "selection.json",
               "--out", tmp_path) == 0
    S = pd.read_csv(tmp_path / "sensitivities.csv", index_col=0)
    assert list(S.columns) == sel["selected"] and S.shape[0] == 14
    assert run("distance-matrix", "--input", tmp_path / "sensitivities.csv", "--out", tmp_path) == 0
    D = pd.read_csv(tmp_path / "distance.csv", index_col=0)
    assert np.allclose(D.to_numpy(), D.to_numpy().T) and np.all(np.diag(D.to_numpy()) == 0)
    leaf = json.loads((tmp_path / "linkage.json").read_text())["leaf_order"]
    clusters = json.loads((synth_dir / "clusters.json").read_text())["clusters"]
    from causalhsp.synth import groups_clusters
    assert groups_clusters(leaf, clusters)
    for method in ("hsp", "qp", "closed-form"):
        sub = tmp_path / method
        assert run("optimize", "--method", method, "--returns", a, "--distance", tmp_path / "distance.csv",
                   "--bounds", "none" if method == "closed-form" else "0.03:0.10", "--out", sub) == 0
        w = pd.read_csv(sub / "weights.csv")
        assert abs(w["weight"].sum() - 1) < 1e-9
    assert run("simulate-paths", "--returns", a, "--drivers", d, "--selection", tmp_path / "selection.json",
               "--horizon", 3, "--paths", 10, "--emit-matrices", "--out", tmp_path) == 0
    stack = pd.read_csv(tmp_path / "distance_stack.csv")
    assert sorted(stack["step"].unique()) == [1, 2, 3] and len(stack) == 3 * 14
    params = json.loads((tmp_path / "sde_params.json").read_text())["params"]
    assert len(params) == 14 * 3


@pytest.mark.parametrize("method", ["hrp", "minvar", "maxsharpe", "cvar"])
def test_optimize_methods(synth_dir, tmp_path, method):
    assert run("optimize", "--method", method, "--returns", synth_dir / "assets.csv", "--out", tmp_path) == 0
    w = pd.read_csv(tmp_path / "weights.csv")["weight"]
    assert abs(w.sum() - 1) < 1e-9 and w.min() >= 0.03 - 1e-9 and w.max() <= 0.10 + 1e-9
    meta = json.loads((tmp_path / "optimize.json").read_text())
    assert meta["method"] == method and meta["bounds"] == [0.03, 0.10]


def test_prices_input_converts_to_returns(tmp_path):
    levels = pd.DataFrame({"date": pd.bdate_range("2021-01-01", periods=80).strftime("%Y-%m-%d"),
                           "A": 100 * np.cumprod(1 + np.random.default_rng(0).normal(0, 0.01, 80)),
                           "B": 50 * np.cumprod(1 + np.random.default_rng(1).normal(0, 0.02, 80))})
    levels.to_csv(tmp_path / "p.csv", index=False)
    assert run("optimize", "--method", "minvar", "--prices", tmp_path / "p.csv", "--bounds", "0:1", "--out", tmp_path) == 0
    w = pd.read_csv(tmp_path / "weights.csv").set_index("asset")["weight"]
    assert w["A"] > w["B"]


def test_flags_override_config(synth_dir, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[data]\nassets = {synth_dir / 'assets.csv'}\n[allocation]\nmethod = minvar\nbounds = 0.03:0.10\n")
    assert run("optimize", "--config", cfg, "--bounds", "0.05:0.09", "--out", tmp_path) == 0
    w = pd.read_csv(tmp_path / "weights.csv")["weight"]
    assert w.min() >= 0.05 - 1e-9 and w.max() <= 0.09 + 1e-9


def test_backtest_artifacts(synth_dir, tmp_path):
    assert run("backtest", "--returns", synth_dir / "assets.csv", "--drivers", synth_dir / "drivers.csv",
               "--methods", "hsp,equal_weight", "--out", tmp_path) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(metrics["methods"]) == {"hsp", "equal_weight"}
    assert set(metrics["methods"]["hsp"]) >= {"Return", "Vol (Ann)", "Sharpe"}
    for m in ("hsp", "equal_weight"):
        nav = pd.read_csv(tmp_path / f"nav_{m}.csv")
        assert nav["nav"].iloc[0] == 100.0
        assert nav["date"].iloc[1] == metrics["first_rebalance"]
    assert run("backtest", "--returns", synth_dir / "assets.csv", "--drivers", synth_dir / "drivers.csv",
               "--methods", "hsp,oracle", "--out", tmp_path) == 2


def test_repeat_runs_are_byte_identical(synth_dir, tmp_path):
    outs = []
    for k in range(2):
        o = tmp_path / str(k)
        assert run("simulate-paths", "--returns", synth_dir / "assets.csv", "--drivers", synth_dir / "drivers.csv",
                   "--driver-list", "MKT,CL1", "--horizon", 5, "--paths", 20, "--seed", 3, "--out", o) == 0
        outs.append({p.name: p.read_bytes() for p in o.iterdir()})
    assert outs[0] == outs[1]


def test_synth_matches_shipped_dataset(tmp_path):
    assert run("synth", "--seed", 0, "--out", tmp_path) == 0
    for name in ("assets.csv", "drivers.csv", "clusters.json"):
        assert (tmp_path / name).read_bytes() == (DATA / name).read_bytes()


def test_module_entry_point_and_log_level(tmp_path):
    env = {"CAUSALHSP_LOG_LEVEL": "debug", "PATH": "/usr/bin:/bin"}
    out = subprocess.run([sys.executable, "-m", "causalhsp.cli", "--version"], capture_output=True, text=True, env=env)
    assert out.returncode == 0 and "0.1.0" in out.stdout
