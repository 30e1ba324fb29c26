"""Walk-forward rebalancing engine and performance metrics.

At each rebalance row ``tau`` the allocator sees rows ``[0, tau)`` only. The
chosen weights become holdings that drift with returns until the next
rebalance (or are reset daily when ``holdings='fixed_weights'``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import allocation as al
from .driver_selection import SelectionConfig, select_drivers
from .errors import InsufficientHistory
from .market_data import ReturnPanel, WindowSpec
from .sde_paths import PathConfig, path_dependent_hsp

BENCHMARKS = ("equal_weight", "min_variance", "max_sharpe", "quadratic_utility", "target_return", "hrp")
METHODS = ("hsp", "path_hsp") + BENCHMARKS


@dataclass(frozen=True)
class BacktestConfig:
    method: str = "hsp"
    rebalance_every: int = 21
    driver_update_every: int = 126
    bounds: tuple = (0.03, 0.10)
    pipeline: al.PipelineConfig = al.PipelineConfig()
    path: PathConfig | None = None
    start: int | None = None          # first rebalance row; default is the warm-up length
    end: int | None = None            # exclusive row bound
    initial_nav: float = 100.0
    holdings: str = "drift"
    cost_bps: float = 0.0
    gamma: float = 1.0
    target: float | None = None
    label: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.rebalance_every < 1 or self.driver_update_every < 1:
            raise ValueError("strides must be >= 1")
        if self.holdings not in ("drift", "fixed_weights"):
            raise ValueError("holdings must be 'drift' or 'fixed_weights'")

    def warmup(self) -> int:
        pc = self.pipeline
        if self.method == "equal_weight":
            return 1
        if self.method in BENCHMARKS:
            return max(pc.hsp.cov_window, 2)
        need = max(pc.selection_window, pc.sensitivity_window + pc.lag, pc.hsp.cov_window, 2)
        if self.method == "path_hsp":
            path = self.path or PathConfig(pipeline=pc)
            need = max(need, path.sens_window + pc.lag + (path.n_hist - 1) * path.stride)
        return need


@dataclass(frozen=True)
class Metrics:
    total_return: float
    ann_vol: float
    sharpe: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {"Return": self.total_return, "Vol (Ann)": self.ann_vol, "Sharpe": self.sharpe,
                "degenerate": self.degenerate}


@dataclass(frozen=True)
class BacktestResult:
    label: str
    dates: np.ndarray
    nav: np.ndarray
    weights: tuple                     # ((date, WeightVector), ...)
    drivers: tuple = ()                # ((date, (names...)), ...)
    metrics: Metrics | None = None
    period_returns: np.ndarray = field(default=None, repr=False)


def metrics(nav, periods_per_year: int = 252) -> Metrics:
    """Total return, annualized volatility and zero-rate Sharpe of a NAV path."""
    nav = np.asarray(nav, float)
    if nav.size < 2 or np.any(~(nav > 0)):
        raise ValueError("NAV must be positive with at least two points")
    r = nav[1:] / nav[:-1] - 1.0
    total = float(nav[-1] / nav[0] - 1.0)
    vol = float(r.std(ddof=1 if r.size > 1 else 0) * np.sqrt(periods_per_year))
    if vol < 1e-12:
        return Metrics(total, vol, 0.0, True)
    return Metrics(total, vol, float(r.mean() * periods_per_year / vol), False)


def _weights_for(method: str, hist_a: ReturnPanel, hist_d: ReturnPanel | None, cfg: BacktestConfig,
                 drivers: tuple | None) -> al.WeightVector:
    pc = replace(cfg.pipeline, drivers=drivers, hsp=replace(cfg.pipeline.hsp, bounds=cfg.bounds))
    if method == "hsp":
        return al.hsp_weights(hist_a, hist_d, pc)
    if method == "path_hsp":
        path = replace(cfg.path or PathConfig(), pipeline=pc)
        return path_dependent_hsp(hist_a, hist_d, path)
    if method == "equal_weight":
        return al.equal_weight(hist_a.names, cfg.bounds)
    cov = al.sample_cov(hist_a, pc.hsp.cov_window)
    mu = np.asarray(hist_a.values)[-pc.hsp.cov_window:].mean(axis=0)
    if method == "min_variance":
        return al.min_variance(cov, cfg.bounds)
    if method == "max_sharpe":
        return al.max_sharpe(mu, cov, cfg.bounds)
    if method == "quadratic_utility":
        return al.quadratic_utility(mu, cov, cfg.gamma, cfg.bounds)
    if method == "target_return":
        target = float(mu.mean()) if cfg.target is None else cfg.target
        return al.target_return(mu, cov, target, cfg.bounds)
    if method == "hrp":
        return al.hrp_weights(cov, cfg.bounds)
    raise ValueError(f"unknown method {method!r}")


def rebalance_rows(n_rows: int, cfg: BacktestConfig) -> list[int]:
    start = cfg.warmup() if cfg.start is None else int(cfg.start)
    stop = n_rows if cfg.end is None else min(int(cfg.end), n_rows)
    if start < cfg.warmup():
        raise InsufficientHistory(cfg.warmup(), start)
    if start >= stop:
        raise InsufficientHistory(start + 1, stop)
    return list(range(start, stop, cfg.rebalance_every))


def run_backtest(panel: ReturnPanel, drivers: ReturnPanel | None, cfg: BacktestConfig,
                 weight_fn: Callable | None = None) -> BacktestResult:
    """Simulate the strategy; ``weight_fn(history_assets, history_drivers, drivers)`` overrides the method."""
    panel = panel.require_complete()
    R = np.asarray(panel.values)
    N, n = R.shape
    taus = rebalance_rows(N, cfg)
    stop = N if cfg.end is None else min(int(cfg.end), N)
    needs_drivers = cfg.method in ("hsp", "path_hsp") and weight_fn is None
    if needs_drivers and drivers is None:
        raise ValueError(f"method {cfg.method!r} needs a driver panel")
    start = taus[0]
    nav = np.empty(stop - start + 1)
    nav[0] = cfg.initial_nav
    port = np.empty(stop - start)
    chosen_w, chosen_d = [], []
    current_drivers = tuple(cfg.pipeline.drivers) if cfg.pipeline.drivers is not None else None
    h = np.zeros(n)
    rebal = set(taus)
    for t in range(start, stop):
        if t in rebal:
            hist_a = panel.rows(0, t)
            hist_d = drivers.rows(0, t) if drivers is not None else None
            if needs_drivers and cfg.pipeline.drivers is None and (t - start) % cfg.driver_update_every == 0:
                sel = replace(cfg.pipeline.selection or SelectionConfig(),
                              window=WindowSpec(hist_a.dates[-1], min(cfg.pipeline.selection_window, t)))
                current_drivers = select_drivers(hist_a, hist_d, sel).selected
                chosen_d.append((panel.dates[t], current_drivers))
            if weight_fn is not None:
                wv = weight_fn(hist_a, hist_d, current_drivers)
            else:
                wv = _weights_for(cfg.method, hist_a, hist_d, cfg, current_drivers)
            chosen_w.append((panel.dates[t], wv))
            cost = cfg.cost_bps * 1e-4 * float(np.abs(wv.weights - h).sum()) if t > start else 0.0
            h = np.array(wv.weights)
        else:
            cost = 0.0
        gross = float(h @ R[t])
        port[t - start] = (1.0 + gross) * (1.0 - cost) - 1.0
        nav[t - start + 1] = nav[t - start] * (1.0 + port[t - start])
        if cfg.holdings == "drift" and 1.0 + gross != 0.0:
            h = h * (1.0 + R[t]) / (1.0 + gross)
    if np.any(~(nav > 0)):
        raise FloatingPointError("NAV reached zero or below")
    nav_dates = panel.dates[start - 1:stop]
    label = cfg.label or cfg.method
    return BacktestResult(label, nav_dates, nav, tuple(chosen_w), tuple(chosen_d), metrics(nav), port)


def run_benchmarks(panel: ReturnPanel, cfg: BacktestConfig,
                   methods: Sequence[str] = BENCHMARKS) -> list[BacktestResult]:
    return [run_backtest(panel, None, replace(cfg, method=m, label=m)) for m in methods]
