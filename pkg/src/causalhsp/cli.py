"""Command-line entry point: ``causalhsp <command> [options]``.

Every command reads CSV inputs, optionally an INI config (flags win), and
writes its artifacts atomically into ``--out``. Failures print a JSON error
object on stderr; exit status is 2 for missing inputs or invalid config and
1 for any other library error.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import allocation as al
from . import __version__
from .backtest import BENCHMARKS, METHODS, BacktestConfig, run_backtest
from .config import RunConfig, load_config, parse_bounds
from .driver_selection import SelectionConfig, scorecard_from_correlations, select_drivers
from .errors import CausalHSPError, ConfigInvalid
from .geometry import DistanceMatrix, kernelize, nearest_psd, sensitivity_distance
from .market_data import ReturnPanel, WindowSpec, load_panel, panel_to_csv_text
from .sde_paths import (PathConfig, calibrate, sensitivity_history, simulate_ensemble,
                        trajectory_distance_matrices)
from .sensitivity_models import NetworkSpec, SensitivityMatrix, estimate_sensitivities
from .synth import two_cluster_market

SCHEMA_VERSION = 1
log = logging.getLogger("causalhsp")


class MissingInput(Exception):
    def __init__(self, path: str, what: str = "input"):
        super().__init__(f"{what} not found: {path}")
        self.path = path


# -- io helpers -----------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    return str(o)


def write_json(path: Path, payload: dict) -> None:
    body = {"schema_version": SCHEMA_VERSION, **payload}
    _atomic_write(path, json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_frame(path: Path, df: pd.DataFrame, index: bool = True) -> None:
    buf = io.StringIO()
    df.to_csv(buf, index=index, float_format="%.17g", lineterminator="\n")
    _atomic_write(path, buf.getvalue())


def _need_file(path, what="input") -> str:
    if path is None:
        raise MissingInput("<unset>", what)
    if not Path(path).is_file():
        raise MissingInput(str(path), what)
    return str(path)


def _read_matrix_csv(path) -> pd.DataFrame:
    return pd.read_csv(_need_file(path), index_col=0, float_precision="round_trip")


# -- shared option plumbing -------------------------------------------------------


def _load_assets(args, cfg: RunConfig) -> ReturnPanel:
    if getattr(args, "prices", None):
        return load_panel(_need_file(args.prices, "prices file"), "prices", cfg.get("data", "align", "inner"))
    path = getattr(args, "returns", None) or cfg.get("data", "assets")
    kind = "returns" if getattr(args, "returns", None) else cfg.get("data", "kind", "returns")
    return load_panel(_need_file(path, "asset file"), kind, cfg.get("data", "align", "inner"))


def _load_drivers(args, cfg: RunConfig) -> ReturnPanel:
    path = getattr(args, "drivers", None) or cfg.get("data", "drivers")
    kind = "prices" if getattr(args, "drivers_prices", False) else cfg.get("data", "drivers_kind", "returns")
    return load_panel(_need_file(path, "driver file"), kind, cfg.get("data", "align", "inner"))


def _align_pair(assets: ReturnPanel, drivers: ReturnPanel):
    common = np.intersect1d(assets.dates, drivers.dates)
    a = ReturnPanel(common, assets.names, np.asarray(assets.values)[np.isin(assets.dates, common)])
    d = ReturnPanel(common, drivers.names, np.asarray(drivers.values)[np.isin(drivers.dates, common)])
    return a, d


def _selection_config(args, cfg: RunConfig) -> SelectionConfig:
    def pick(flag, key, default):
        v = getattr(args, flag, None)
        return v if v is not None else cfg.get("selection", key, default)

    exclude = list(cfg.get("selection", "exclude", []))
    if getattr(args, "exclude", None):
        text = Path(_need_file(args.exclude, "exclusion file")).read_text()
        exclude += [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    screen = cfg.get("selection", "screen_collinear", True)
    if getattr(args, "no_screen", False):
        screen = False
    return SelectionConfig(m=pick("m", "m", 3), epsilon=pick("epsilon", "epsilon", 0.5),
                           t0=pick("t0", "t0", 0.0), t1=pick("t1", "t1", 0.0),
                           mode=pick("mode", "mode", "rccp_rank"), exclude=tuple(exclude),
                           screen_collinear=screen, gs_estimator=pick("estimator", "estimator", "residual"),
                           exhaustive=bool(pick("exhaustive", "exhaustive", False)))


def _selection_window(args, cfg) -> int:
    v = getattr(args, "window", None)
    return v if v is not None else cfg.get("selection", "window", 125)


def _driver_names(args, panel: ReturnPanel) -> list[str]:
    if getattr(args, "selection", None):
        data = json.loads(Path(_need_file(args.selection, "selection file")).read_text())
        return list(data["selected"])
    if getattr(args, "driver_list", None):
        return [x.strip() for x in args.driver_list.split(",") if x.strip()]
    return list(panel.names)


def _sens_settings(args, cfg: RunConfig) -> dict:
    def pick(flag, key, default):
        v = getattr(args, flag, None)
        return v if v is not None else cfg.get("sensitivity", key, default)

    return {"model": pick("model", "model", "linear"), "lag": pick("lag", "lag", 0),
            "window": pick("window", "window", 125), "aggregation": pick("agg", "aggregation", "mean"),
            "scope": pick("scope", "scope", "in"), "epochs": pick("epochs", "epochs", 500),
            "learning_rate": cfg.get("sensitivity", "learning_rate", 1e-2),
            "optimizer": cfg.get("sensitivity", "optimizer", "gd")}


def _seed(args, cfg) -> int:
    return args.seed if getattr(args, "seed", None) is not None else cfg.get("run", "seed", 0)


def _hsp_config(args, cfg: RunConfig, bounds) -> al.HspConfig:
    repair = cfg.get("geometry", "psd_repair", False)
    if getattr(args, "psd_repair", None) is not None:
        repair = args.psd_repair
    return al.HspConfig(psd_repair=repair,
                        linkage_input=getattr(args, "linkage_input", None) or cfg.get("geometry", "linkage_input", "columns"),
                        cov_window=cfg.get("allocation", "cov_window", 63), bounds=bounds)


def _pipeline(args, cfg: RunConfig, bounds) -> al.PipelineConfig:
    s = _sens_settings(argparse.Namespace(), cfg)
    spec = NetworkSpec(seed=cfg.get("run", "seed", 0), epochs=s["epochs"], learning_rate=s["learning_rate"],
                       optimizer=s["optimizer"])
    return al.PipelineConfig(selection=_selection_config(argparse.Namespace(), cfg),
                             sensitivity_window=s["window"], lag=s["lag"], model=s["model"],
                             aggregation=s["aggregation"], scope=s["scope"], network=spec,
                             hsp=_hsp_config(args, cfg, bounds),
                             selection_window=cfg.get("selection", "window", 125))


# -- commands ---------------------------------------------------------------------


def cmd_select_drivers(args, cfg: RunConfig, out: Path) -> None:
    sc = _selection_config(args, cfg)
    if args.correlations:
        df = _read_matrix_csv(args.correlations)
        card = scorecard_from_correlations(df.to_numpy(float), [str(i) for i in df.index],
                                           [str(c) for c in df.columns], sc.m, sc.epsilon, sc.exclude,
                                           sc.screen_collinear)
    else:
        assets = _load_assets(args, cfg)
        drivers = _load_drivers(args, cfg)
        assets, drivers = _align_pair(assets, drivers)
        win = min(_selection_window(args, cfg), assets.n_rows)
        card = select_drivers(assets, drivers, replace(sc, window=WindowSpec(assets.dates[-1], win)))
    rank = {c: k + 1 for k, c in enumerate(card.ranking)}
    table = pd.DataFrame({
        "candidate": list(card.candidates),
        "R": card.repeatedness.astype(int),
        "S": card.strength,
        "rank": [rank[c] for c in card.candidates],
        "selected": [c in card.selected for c in card.candidates],
    }).sort_values("rank")
    write_frame(out / "scorecard.csv", table, index=False)
    write_json(out / "selection.json", card.summary())


def cmd_fit_sensitivities(args, cfg: RunConfig, out: Path) -> None:
    assets = _load_assets(args, cfg)
    drivers = _load_drivers(args, cfg)
    assets, drivers = _align_pair(assets, drivers)
    s = _sens_settings(args, cfg)
    drivers = drivers.select(_driver_names(args, drivers))
    spec = NetworkSpec(seed=_seed(args, cfg), epochs=s["epochs"], learning_rate=s["learning_rate"],
                       optimizer=s["optimizer"])
    window = WindowSpec(assets.dates[-1], s["window"], s["lag"])
    S, reports = estimate_sensitivities(assets, drivers, window, s["model"], s["aggregation"], s["scope"], spec)
    write_frame(out / "sensitivities.csv", pd.DataFrame(S.values, index=pd.Index(S.assets, name="asset"),
                                                        columns=list(S.drivers)))
    write_json(out / "fit_report.json", {
        "model": s["model"], "lag": s["lag"], "window": s["window"], "aggregation": s["aggregation"],
        "scope": s["scope"], "drivers": list(S.drivers),
        "assets": [r.__dict__ for r in reports],
    })


def _sensitivity_from_csv(path) -> SensitivityMatrix:
    df = _read_matrix_csv(path)
    return SensitivityMatrix([str(i) for i in df.index], [str(c) for c in df.columns], df.to_numpy(float))


def _distance_from_csv(path) -> DistanceMatrix:
    df = _read_matrix_csv(path)
    return DistanceMatrix([str(i) for i in df.index], df.to_numpy(float))


def cmd_distance_matrix(args, cfg: RunConfig, out: Path) -> None:
    S = _sensitivity_from_csv(args.input)
    D = sensitivity_distance(S)
    hsp = _hsp_config(args, cfg, None)
    order, tree = al.tree_order(D, hsp)
    if args.metric.startswith("kernel:"):
        emitted = kernelize(D, float(args.metric.split(":", 1)[1]))
    elif args.metric in ("euclid", "euclidean"):
        emitted = nearest_psd(D) if hsp.psd_repair else D
    else:
        raise ValueError(f"unknown metric {args.metric!r}")
    write_frame(out / "distance.csv", pd.DataFrame(emitted.values, index=pd.Index(D.names, name="asset"),
                                                   columns=list(D.names)))
    write_json(out / "linkage.json", {
        "metric": emitted.metric, "psd_repair": hsp.psd_repair, "linkage_input": hsp.linkage_input,
        "merges": tree.merges.tolist(), "leaf_order": [D.names[i] for i in order],
    })


def cmd_optimize(args, cfg: RunConfig, out: Path) -> None:
    method = args.method or cfg.get("allocation", "method", "hsp")
    bounds = parse_bounds(args.bounds) if args.bounds is not None else cfg.get("allocation", "bounds", (0.03, 0.10))
    lam = args.lam if args.lam is not None else cfg.get("allocation", "lambda", 1.0)
    alpha = args.alpha if args.alpha is not None else cfg.get("allocation", "alpha", 0.95)
    cov_window = cfg.get("allocation", "cov_window", 63)

    def returns():
        return _load_assets(args, cfg)

    extra = {}
    if method == "hsp":
        assets = returns()
        hsp = _hsp_config(args, cfg, bounds)
        if args.distance:
            wv = al.hsp_from_distance(_distance_from_csv(args.distance), al.sample_cov(assets, hsp.cov_window), hsp)
        else:
            drivers = _load_drivers(args, cfg)
            assets, drivers = _align_pair(assets, drivers)
            wv = al.hsp_weights(assets, drivers, _pipeline(args, cfg, bounds))
    elif method == "hrp":
        wv = al.hrp_weights(al.sample_cov(returns(), cov_window), bounds)
    elif method == "closed-form":
        wv = al.closed_form_distance_weights(_distance_from_csv(args.distance), "pinv" if args.pinv else "inverse")
    elif method == "qp":
        D = _distance_from_csv(args.distance)
        cov = None
        if args.returns or args.prices or cfg.get("data", "assets"):
            panel = returns().select(list(D.names))
            cov = al.sample_cov(panel, cov_window)
        wv = al.qp_distance_weights(D, bounds, lam, cov)
    elif method == "minvar":
        wv = al.min_variance(al.sample_cov(returns(), cov_window), bounds)
    elif method == "maxsharpe":
        panel = returns()
        mu = np.asarray(panel.values)[-cov_window:].mean(axis=0)
        wv = al.max_sharpe(mu, al.sample_cov(panel, cov_window), bounds)
    elif method == "cvar":
        panel = returns()
        wv, cvar, zeta = al.cvar_optimize(al.CvarProblem(np.asarray(panel.values), alpha,
                                                         bounds if bounds is not None else (None, None),
                                                         panel.names))
        extra = {"cvar": cvar, "zeta": zeta}
    else:
        raise ValueError(f"unknown method {method!r}")
    write_frame(out / "weights.csv", pd.DataFrame({"asset": list(wv.names), "weight": wv.weights}), index=False)
    write_json(out / "optimize.json", {**wv.diagnostics, **extra, "method": method, "bounds": bounds})


def cmd_simulate_paths(args, cfg: RunConfig, out: Path) -> None:
    model = args.model or cfg.get("sde", "model", "vasicek")
    horizon = args.horizon or cfg.get("sde", "horizon", 21)
    n_paths = args.paths or cfg.get("sde", "paths", 1000)
    seed = _seed(args, cfg)
    dt = cfg.get("sde", "dt", 1.0 / 252)
    span = cfg.get("sde", "theta_span", 21)
    if args.series:
        df = _read_matrix_csv(args.series)
        hist = df.to_numpy(float)[:, :, None]
        assets, drivers = [str(c) for c in df.columns], ["s"]
    else:
        a = _load_assets(args, cfg)
        d = _load_drivers(args, cfg)
        a, d = _align_pair(a, d)
        d = d.select(_driver_names(args, d))
        hist = sensitivity_history(a, d, cfg.get("sde", "sens_window", 63), cfg.get("sde", "n_hist", 60),
                                   cfg.get("sde", "stride", 1), cfg.get("sensitivity", "lag", 0))
        assets, drivers = list(a.names), list(d.names)
    n, m = hist.shape[1:]
    params = [[calibrate(hist[:, i, j], model, dt, span) for j in range(m)] for i in range(n)]
    ens = simulate_ensemble(hist[-1], params, horizon, n_paths, seed, assets, drivers,
                            cfg.get("sde", "common_noise", False))
    mean = ens.paths.mean(axis=0)
    rows = [(t, assets[i], drivers[j], mean[t, i, j]) for t in range(mean.shape[0])
            for i in range(n) for j in range(m)]
    write_frame(out / "path_means.csv", pd.DataFrame(rows, columns=["step", "asset", "driver", "mean"]), index=False)
    write_json(out / "sde_params.json", {"model": model, "horizon": horizon, "paths": n_paths, "seed": seed,
                                         "params": ens.params})
    if args.emit_matrices:
        frames = []
        for t, D in enumerate(trajectory_distance_matrices(ens), start=1):
            f = pd.DataFrame(D.values, columns=list(D.names))
            f.insert(0, "asset", list(D.names))
            f.insert(0, "step", t)
            frames.append(f)
        write_frame(out / "distance_stack.csv", pd.concat(frames, ignore_index=True), index=False)


def cmd_backtest(args, cfg: RunConfig, out: Path) -> None:
    assets = _load_assets(args, cfg)
    drivers = _load_drivers(args, cfg)
    assets, drivers = _align_pair(assets, drivers)
    bounds = cfg.get("allocation", "bounds", (0.03, 0.10))
    methods = args.methods.split(",") if args.methods else cfg.get("backtest", "methods", ["hsp"] + list(BENCHMARKS))
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigInvalid(cfg.source or "<flags>", f"unknown backtest methods {unknown}")
    pipe = _pipeline(args, cfg, bounds)
    path = PathConfig(pipeline=pipe, model=cfg.get("sde", "model", "vasicek"), dt=cfg.get("sde", "dt", 1.0 / 252),
                      horizon=cfg.get("sde", "horizon", 21), n_paths=cfg.get("sde", "paths", 200),
                      seed=_seed(args, cfg), sens_window=cfg.get("sde", "sens_window", 63),
                      n_hist=cfg.get("sde", "n_hist", 60), stride=cfg.get("sde", "stride", 1),
                      theta_span=cfg.get("sde", "theta_span", 21),
                      common_noise=cfg.get("sde", "common_noise", False))
    base = BacktestConfig(rebalance_every=cfg.get("backtest", "rebalance_every", 21),
                          driver_update_every=cfg.get("backtest", "driver_update_every", 126),
                          bounds=bounds, pipeline=pipe, path=path,
                          initial_nav=cfg.get("backtest", "initial_nav", 100.0),
                          holdings=cfg.get("backtest", "holdings", "drift"),
                          cost_bps=cfg.get("backtest", "cost_bps", 0.0), gamma=cfg.get("allocation", "gamma", 1.0),
                          target=cfg.get("allocation", "target"))
    start = max(BacktestConfig(method=m, pipeline=pipe, path=path).warmup() for m in methods)
    start = max(start, cfg.get("backtest", "start", 0))
    summary = {}
    for m in methods:
        res = run_backtest(assets, drivers, replace(base, method=m, label=m, start=start))
        write_frame(out / f"nav_{m}.csv", pd.DataFrame({"date": [str(d) for d in res.dates], "nav": res.nav}), index=False)
        rows = [{"date": str(d), **wv.as_dict()} for d, wv in res.weights]
        write_frame(out / f"weights_{m}.csv", pd.DataFrame(rows), index=False)
        summary[m] = {**res.metrics.as_dict(),
                      "drivers": [{"date": str(d), "selected": list(s)} for d, s in res.drivers]}
    write_json(out / "metrics.json", {"methods": summary, "first_rebalance": str(assets.dates[start]),
                                      "rebalance_every": base.rebalance_every,
                                      "driver_update_every": base.driver_update_every})


def cmd_synth(args, cfg: RunConfig, out: Path) -> None:
    mk = two_cluster_market(seed=_seed(args, cfg), n_assets=args.assets_n, n_rows=args.rows)
    _atomic_write(out / "assets.csv", panel_to_csv_text(mk.assets))
    _atomic_write(out / "drivers.csv", panel_to_csv_text(mk.drivers))
    write_json(out / "clusters.json", {"clusters": [list(c) for c in mk.clusters],
                                       "drivers": list(mk.drivers.names)})


# -- parser -------------------------------------------------------------------------


def _add_inputs(p, drivers=True):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--returns", help="asset CSV already in return form")
    g.add_argument("--prices", help="asset CSV of price levels (converted to returns)")
    if drivers:
        p.add_argument("--drivers", help="driver candidate CSV")
        p.add_argument("--drivers-prices", action="store_true", help="driver file holds levels")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="causalhsp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", default=None, help="output directory (default: [run] output or '.')")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=fn)
        return p

    p = command("select-drivers", cmd_select_drivers, "rank and select common drivers")
    _add_inputs(p)
    p.add_argument("--mode", choices=["rank", "threshold", "greedy", "dp", "ml"])
    p.add_argument("--m", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--t1", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--exclude", help="file with one identifier per line")
    p.add_argument("--no-screen", action="store_true", help="keep near-duplicate candidates")
    p.add_argument("--estimator", choices=["fitted", "residual", "product"])
    p.add_argument("--exhaustive", action="store_true", default=None)
    p.add_argument("--correlations", help="candidate x asset correlation CSV (skips data loading)")

    p = command("fit-sensitivities", cmd_fit_sensitivities, "fit per-asset models and aggregate sensitivities")
    _add_inputs(p)
    p.add_argument("--model", choices=["linear", "network"])
    p.add_argument("--lag", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--agg", choices=["mean", "median"])
    p.add_argument("--scope", choices=["in", "out"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--selection", help="selection.json from select-drivers")
    p.add_argument("--driver-list", help="comma-separated driver names")

    p = command("distance-matrix", cmd_distance_matrix, "sensitivity distances and single linkage")
    p.add_argument("--input", required=True, help="sensitivities.csv")
    p.add_argument("--psd-repair", dest="psd_repair", action="store_true", default=None)
    p.add_argument("--no-psd-repair", dest="psd_repair", action="store_false")
    p.add_argument("--metric", default="euclid", help="euclid or kernel:SIGMA")
    p.add_argument("--linkage-input", choices=["columns", "direct"])

    p = command("optimize", cmd_optimize, "portfolio weights")
    _add_inputs(p)
    p.add_argument("--method", choices=["hsp", "hrp", "closed-form", "qp", "minvar", "maxsharpe", "cvar"])
    p.add_argument("--bounds", help="LO:HI, or 'none'")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--distance", help="distance.csv from distance-matrix")
    p.add_argument("--pinv", action="store_true", help="pseudoinverse for closed-form weights")
    p.add_argument("--psd-repair", dest="psd_repair", action="store_true", default=None)
    p.add_argument("--linkage-input", choices=["columns", "direct"])

    p = command("simulate-paths", cmd_simulate_paths, "calibrate and simulate sensitivity SDEs")
    _add_inputs(p)
    p.add_argument("--model", choices=["vasicek", "hull_white", "arima_ar1", "local_vol_linear"])
    p.add_argument("--horizon", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--series", help="CSV of sensitivity series, one column each")
    p.add_argument("--selection", help="selection.json from select-drivers")
    p.add_argument("--driver-list", help="comma-separated driver names")
    p.add_argument("--emit-matrices", action="store_true")

    p = command("backtest", cmd_backtest, "walk-forward backtest")
    _add_inputs(p)
    p.add_argument("--methods", help="comma-separated methods")

    p = command("synth", cmd_synth, "write a synthetic two-cluster market")
    p.add_argument("--assets-n", type=int, default=14)
    p.add_argument("--rows", type=int, default=756)
    return ap


def _emit_error(payload: dict) -> None:
    sys.stderr.write(json.dumps(payload, sort_keys=True, default=_json_default) + "\n")


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CAUSALHSP_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.get("run", "output") or ".")
        args.func(args, cfg, out)
    except MissingInput as exc:
        _emit_error({"error": "missing_input", "message": str(exc), "path": exc.path})
        return 2
    except ConfigInvalid as exc:
        _emit_error(exc.to_dict())
        return 2
    except CausalHSPError as exc:
        _emit_error(exc.to_dict())
        return 1
    except (ValueError, KeyError, FloatingPointError) as exc:
        _emit_error({"error": type(exc).__name__, "message": str(exc)})
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
