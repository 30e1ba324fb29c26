"""Mean-reverting models for sensitivity time series and path-dependent HSP.

Calibration regresses S[t+1] on S[t] and maps (slope, intercept, residual
std) to (kappa, theta, sigma)::

    kappa = (1 - slope) / dt,  theta = intercept / (kappa dt),  sigma = std / sqrt(dt)

Simulation is plain Euler-Maruyama driven by counter-based normal streams,
one substream per (asset, driver, path).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels, rng
from .allocation import HspConfig, PipelineConfig, WeightVector, hsp_from_distance, sample_cov
from .errors import ShapeMismatch, TooShort
from .geometry import DistanceMatrix, aggregate_trajectory, sensitivity_distance
from .market_data import ReturnPanel, lagged_pair, WindowSpec
from .sensitivity_models import fit_linear

MODELS = ("vasicek", "hull_white", "arima_ar1", "local_vol_linear")
MIN_CALIBRATION = 30


@dataclass(frozen=True)
class SdeParams:
    model: str
    kappa: float
    theta: float | np.ndarray
    sigma: float
    dt: float
    alpha: float = 0.0
    beta: float = 0.0
    explosive: bool = False
    slope: float = float("nan")

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.kappa < 0 or self.sigma < 0 or not self.dt > 0:
            raise ValueError("need kappa >= 0, sigma >= 0, dt > 0")

    def theta_path(self, T: int) -> np.ndarray:
        """Per-step long-run level over a horizon of T steps."""
        th = np.atleast_1d(np.asarray(self.theta, float))
        if th.size == 1:
            return np.full(T, th[0])
        if th.size >= T:
            return th[-T:]
        return np.concatenate([np.full(T - th.size, th[0]), th])

    def to_dict(self) -> dict:
        th = np.asarray(self.theta, float)
        return {"model": self.model, "kappa": self.kappa, "sigma": self.sigma, "dt": self.dt,
                "theta": th.tolist() if th.ndim else float(th), "alpha": self.alpha,
                "beta": self.beta, "explosive": self.explosive, "slope": self.slope}


def calibrate(series, model: str = "vasicek", dt: float = 1.0, theta_span: int = 21) -> SdeParams:
    """Fit one of the mean-reverting models to a sensitivity series."""
    s = np.asarray(series, float).ravel()
    if s.size < MIN_CALIBRATION:
        raise TooShort(f"need {MIN_CALIBRATION} observations, have {s.size}",
                       needed=MIN_CALIBRATION, available=s.size)
    if not np.all(np.isfinite(s)):
        raise ValueError("series must be finite")
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    if model == "local_vol_linear":
        return _calibrate_local_vol(s, dt)
    x, y = s[:-1], s[1:]
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum() / sxx) if np.ptp(x) > 0 else 0.0
    intercept = float(ym - slope * xm)
    resid = y - intercept - slope * x
    sigma = float(np.sqrt(np.mean(resid * resid)) / np.sqrt(dt))
    explosive = abs(slope) > 1.0 + 1e-6
    kappa = max((1.0 - slope) / dt, 0.0)
    theta = intercept / (kappa * dt) if kappa > 0 and not explosive else float(s.mean())
    if model == "hull_white":
        span = max(1, min(theta_span, s.size))
        c = np.concatenate([[0.0], np.cumsum(s)])
        theta = (c[span:] - c[:-span]) / span
    return SdeParams(model, kappa, theta, sigma, dt, explosive=explosive, slope=slope)


def _calibrate_local_vol(s: np.ndarray, dt: float) -> SdeParams:
    """Moment fit of S[t+1] = S[t](1 - kappa dt) + S[t](alpha + beta t) sqrt(dt) z."""
    x, y = s[:-1], s[1:]
    ok = x != 0.0
    if ok.sum() < 3:
        raise TooShort("local-vol calibration needs non-zero levels")
    r = y[ok] / x[ok]
    kappa = max((1.0 - r.mean()) / dt, 0.0)
    u = (r - (1.0 - kappa * dt)) / np.sqrt(dt)
    t = np.flatnonzero(ok) * dt
    # E|u| = sqrt(2/pi) |alpha + beta t| for Gaussian z
    beta, alpha = np.polyfit(t, np.abs(u) * np.sqrt(np.pi / 2.0), 1)
    return SdeParams("local_vol_linear", kappa, float(s.mean()), 0.0, dt, float(alpha), float(beta),
                     slope=float(r.mean()))


def simulate(params: SdeParams, s0: float, T: int, n_paths: int = 1, seed: int = 0,
             labels: tuple = (), sigma_override: float | None = None) -> np.ndarray:
    """(n_paths, T + 1) Euler-Maruyama paths, column 0 equal to ``s0``."""
    if T < 1 or n_paths < 1:
        raise ValueError("need T >= 1 and n_paths >= 1")
    Z = rng.normal_matrix(seed, n_paths, T, "sde", *labels)
    if params.model == "local_vol_linear":
        out = kernels.euler_local_vol(s0, params.kappa, params.alpha, params.beta, params.dt, Z)
    else:
        sigma = params.sigma if sigma_override is None else sigma_override
        out = kernels.euler_ou(s0, params.kappa, params.theta_path(T), sigma, params.dt, Z)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("simulated path is not finite")
    return out


@dataclass(frozen=True)
class PathEnsemble:
    assets: tuple
    drivers: tuple
    paths: np.ndarray          # (n_paths, T + 1, n, m); step 0 is the start
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.paths, float)
        if p.ndim != 4 or p.shape[2:] != (len(self.assets), len(self.drivers)):
            raise ShapeMismatch(f"paths shape {p.shape} inconsistent with names")
        if not np.all(np.isfinite(p)):
            raise ValueError("paths must be finite")
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "drivers", tuple(self.drivers))

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def horizon(self) -> int:
        return self.paths.shape[1] - 1


def simulate_ensemble(s0: np.ndarray, params: Sequence[Sequence[SdeParams]], T: int, n_paths: int,
                      seed: int, assets: Sequence[str], drivers: Sequence[str],
                      common_noise: bool = False, sigma_override: float | None = None) -> PathEnsemble:
    """Simulate every (asset, driver) sensitivity from its own start and parameters."""
    s0 = np.asarray(s0, float)
    n, m = s0.shape
    out = np.empty((n_paths, T + 1, n, m))
    for i in range(n):
        for j in range(m):
            labels = ("common",) if common_noise else (i, j)
            out[:, :, i, j] = simulate(params[i][j], s0[i, j], T, n_paths, seed, labels, sigma_override)
    pdict = {f"{assets[i]}|{drivers[j]}": params[i][j].to_dict() for i in range(n) for j in range(m)}
    return PathEnsemble(assets, drivers, out, seed, pdict)


def trajectory_distance_matrices(ens: PathEnsemble) -> list[DistanceMatrix]:
    """One distance matrix per simulated step from path-averaged sensitivities."""
    mean = ens.paths[:, 1:].mean(axis=0)     # (T, n, m)
    return [sensitivity_distance(mean[t], ens.assets) for t in range(mean.shape[0])]


# -- path-dependent HSP -------------------------------------------------------


@dataclass(frozen=True)
class PathConfig:
    pipeline: PipelineConfig = PipelineConfig()
    model: str = "vasicek"
    dt: float = 1.0 / 252
    horizon: int = 21
    n_paths: int = 200
    seed: int = 0
    sens_window: int = 63
    n_hist: int = 60
    stride: int = 1
    theta_span: int = 21
    aggregate: str = "cumulative"
    common_noise: bool = False
    sigma_override: float | None = None


def sensitivity_history(assets: ReturnPanel, drivers: ReturnPanel, window: int, n_hist: int,
                        stride: int = 1, lag: int = 0) -> np.ndarray:
    """Linear betas refitted on sliding windows: array (n_points, n_assets, m_drivers)."""
    ends = list(range(assets.n_rows - 1, assets.n_rows - 1 - n_hist * stride, -stride))[::-1]
    if ends[0] + 1 < window + lag:
        raise TooShort(f"need {window + lag + (n_hist - 1) * stride} rows for the sensitivity history",
                       needed=window + lag + (n_hist - 1) * stride, available=assets.n_rows)
    out = np.empty((len(ends), assets.shape[1], drivers.shape[1]))
    for k, e in enumerate(ends):
        X, Y = lagged_pair(drivers, assets, WindowSpec(assets.dates[e], window, lag))
        for i in range(Y.shape[1]):
            out[k, i] = fit_linear(Y[:, i], X).betas
    return out


def path_dependent_hsp(assets: ReturnPanel, drivers: ReturnPanel, cfg: PathConfig = PathConfig()) -> WeightVector:
    """HSP on the aggregated distance matrices of simulated sensitivity trajectories."""
    from .driver_selection import SelectionConfig, select_drivers

    pc = cfg.pipeline
    if pc.drivers is not None:
        chosen = tuple(pc.drivers)
    else:
        sel = replace(pc.selection or SelectionConfig(),
                      window=WindowSpec(assets.dates[-1], min(pc.selection_window, assets.n_rows)))
        chosen = select_drivers(assets, drivers, sel).selected
    dsel = drivers.select(list(chosen))
    hist = sensitivity_history(assets, dsel, cfg.sens_window, cfg.n_hist, cfg.stride, pc.lag)
    n, m = hist.shape[1:]
    params = [[calibrate(hist[:, i, j], cfg.model, cfg.dt, cfg.theta_span) for j in range(m)]
              for i in range(n)]
    ens = simulate_ensemble(hist[-1], params, cfg.horizon, cfg.n_paths, cfg.seed, assets.names,
                            chosen, cfg.common_noise, cfg.sigma_override)
    D = aggregate_trajectory(trajectory_distance_matrices(ens), cfg.aggregate)
    wv = hsp_from_distance(D, sample_cov(assets, pc.hsp.cov_window), pc.hsp)
    return replace(wv, diagnostics=dict(wv.diagnostics, method="path_hsp", drivers=list(chosen),
                                        explosive=[k for k, v in ens.params.items() if v["explosive"]]))
