"""Portfolio weights from distance structure and return statistics.

Allocators
----------
recursive_bisection
    Top-down split of a sorted asset list with inverse-variance clusters.
hsp_weights / hrp_weights
    Tree ordering from sensitivity or correlation distances, then bisection.
closed_form_distance_weights, qp_distance_weights
    Minimize w'Dw (optionally plus w'Sigma w) on the budget hyperplane.
cvar_optimize
    Rockafellar-Uryasev scenario LP.
min_variance, max_sharpe, quadratic_utility, target_return, equal_weight
    Mean-variance benchmarks solved with the same bounded QP.

Risk mappings translate sensitivities into expected returns, covariances,
volatilities and per-driver attributions; ``copula_var`` samples a Gaussian
copula of asset sensitivities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm

from . import kernels, rng
from .errors import (Infeasible, NegativeQuadraticForm, NonPsdCorrelation, ShapeMismatch,
                     SingularMatrix, ZeroVariance)
from .geometry import DistanceMatrix, column_distance, nearest_psd, single_linkage
from .market_data import ReturnPanel
from .sensitivity_models import SensitivityMatrix

SUM_TOL = 1e-9
BIG_BOUND = 1e6


# -- types --------------------------------------------------------------------


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def make(cls, n: int, bounds=None) -> "Bounds":
        """From ``None`` (unbounded), a (lo, hi) pair of scalars or vectors, or Bounds."""
        if isinstance(bounds, Bounds):
            return bounds
        if bounds is None:
            lo, hi = -np.inf, np.inf
        else:
            lo, hi = bounds
        lo = np.broadcast_to(np.asarray(-np.inf if lo is None else lo, float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(np.inf if hi is None else hi, float), (n,)).copy()
        if np.any(lo > hi):
            raise Infeasible("a lower bound exceeds its upper bound")
        return cls(lo, hi)

    @property
    def active(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    def check(self, total: float = 1.0) -> None:
        if self.lower.sum() > total + SUM_TOL or self.upper.sum() < total - SUM_TOL:
            raise Infeasible(f"bounds cannot meet the budget: sum(lower)={self.lower.sum():.6g}, "
                             f"sum(upper)={self.upper.sum():.6g}",
                             lower=float(self.lower.sum()), upper=float(self.upper.sum()))

    def finite(self, total: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Equivalent finite box: each weight is capped by the budget minus the others' floors."""
        lo, hi = self.lower.copy(), self.upper.copy()
        if np.all(np.isfinite(lo)):
            hi = np.minimum(hi, total - (lo.sum() - lo))
        if np.all(np.isfinite(hi)):
            lo = np.maximum(lo, total - (hi.sum() - hi))
        return np.clip(lo, -BIG_BOUND, BIG_BOUND), np.clip(hi, -BIG_BOUND, BIG_BOUND)


@dataclass(frozen=True)
class WeightVector:
    names: tuple
    weights: np.ndarray
    bounds: Bounds | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, float)
        object.__setattr__(self, "names", tuple(self.names))
        if w.shape != (len(self.names),):
            raise ShapeMismatch("weights and names differ in length")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"weights sum to {w.sum():.12g}, not 1")
        if self.bounds is not None and self.bounds.active:
            if np.any(w < self.bounds.lower - SUM_TOL) or np.any(w > self.bounds.upper + SUM_TOL):
                raise ValueError("weights violate their bounds")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.weights.tolist()))


@dataclass(frozen=True)
class CovEstimate:
    names: tuple
    matrix: np.ndarray
    window: int | None = None

    def __post_init__(self):
        M = np.array(self.matrix, float)
        object.__setattr__(self, "names", tuple(self.names))
        if M.shape != (len(self.names),) * 2:
            raise ShapeMismatch("covariance shape does not match names")
        if np.abs(M - M.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(M).max(initial=0.0)):
            raise ValueError("covariance must be symmetric")
        M = 0.5 * (M + M.T)
        if M.size and np.linalg.eigvalsh(M)[0] < -1e-10:
            raise ValueError("covariance is not positive semi-definite")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)


@dataclass(frozen=True)
class CvarProblem:
    scenarios: np.ndarray
    alpha: float = 0.95
    bounds: object = (0.0, 1.0)
    names: tuple = ()

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.scenarios, float))
        if R.shape[0] < 1 or not np.all(np.isfinite(R)):
            raise ValueError("need at least one finite scenario row")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "scenarios", R)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"a{i}" for i in range(R.shape[1])))


def sample_cov(panel: ReturnPanel, window: int | None = None) -> CovEstimate:
    vals = np.asarray(panel.require_complete().values)
    if window is not None:
        vals = vals[-window:]
    M = np.atleast_2d(np.cov(vals, rowvar=False, ddof=1))
    return CovEstimate(panel.names, M, vals.shape[0])


# -- bisection ----------------------------------------------------------------


def inverse_variance(V: np.ndarray) -> np.ndarray:
    iv = 1.0 / np.diag(V)
    return iv / iv.sum()


def cluster_variance(V: np.ndarray, idx) -> float:
    sub = V[np.ix_(idx, idx)]
    w = inverse_variance(sub)
    return float(w @ sub @ w)


def clip_redistribute(w: np.ndarray, lo: np.ndarray, hi: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """Clip to the box and spread the excess proportionally over unclipped names.

    Iterates to a fixed point; falls back to the exact capped-simplex projection
    if proportional rescaling cannot reach the budget.
    """
    w = np.asarray(w, float).copy()
    n = w.size
    fixed = np.zeros(n, dtype=bool)
    for _ in range(max_iter or n + 1):
        below, above = (w < lo) & ~fixed, (w > hi) & ~fixed
        if not (below.any() or above.any()):
            break
        w[below], w[above] = lo[below], hi[above]
        fixed |= below | above
        free = ~fixed
        room = 1.0 - w[fixed].sum()
        if not free.any() or w[free].sum() <= 0.0:
            return kernels.project_capped_simplex(w, lo, hi)
        w[free] *= room / w[free].sum()
    if np.any(w < lo - SUM_TOL) or np.any(w > hi + SUM_TOL) or abs(w.sum() - 1.0) > SUM_TOL:
        return kernels.project_capped_simplex(w, lo, hi)
    return w


def recursive_bisection(cov: CovEstimate, order: Sequence[int], bounds=None) -> WeightVector:
    """Split the ordered list at midpoints; alpha1 = 1 - v1 / (v1 + v2)."""
    V = np.asarray(cov.matrix)
    n = V.shape[0]
    order = [int(i) for i in order]
    if sorted(order) != list(range(n)):
        raise ValueError("leaf order must be a permutation of the assets")
    zero = np.flatnonzero(~(np.diag(V) > 0))
    if zero.size:
        raise ZeroVariance(cov.names[zero[0]])
    w = np.ones(n)
    segments = [order]
    while segments:
        nxt = []
        for seg in segments:
            if len(seg) < 2:
                continue
            half = len(seg) // 2
            left, right = seg[:half], seg[half:]
            v1, v2 = cluster_variance(V, left), cluster_variance(V, right)
            a1 = 1.0 - v1 / (v1 + v2)
            w[left] *= a1
            w[right] *= 1.0 - a1
            nxt += [left, right]
        segments = nxt
    b = Bounds.make(n, bounds)
    if b.active:
        b.check()
        w = clip_redistribute(w, *b.finite())
    return WeightVector(cov.names, w, b if b.active else None,
                        {"method": "recursive_bisection", "order": order})


# -- hierarchical allocators ----------------------------------------------------


@dataclass(frozen=True)
class HspConfig:
    """Stages after driver selection and sensitivity fitting.

    ``linkage_input='columns'`` clusters on distances between columns of the
    (optionally repaired) matrix, as the HRP lineage does; ``'direct'`` treats
    the matrix entries themselves as linkage distances.
    """

    psd_repair: bool = False
    linkage_input: str = "columns"
    cov_window: int = 63
    bounds: tuple | None = (0.03, 0.10)

    def __post_init__(self):
        if self.linkage_input not in ("columns", "direct"):
            raise ValueError("linkage_input must be 'columns' or 'direct'")


def tree_order(D: DistanceMatrix, cfg: HspConfig = HspConfig()):
    """Leaf order and linkage for a distance matrix under ``cfg``."""
    M = nearest_psd(D) if cfg.psd_repair else D
    L = column_distance(M) if cfg.linkage_input == "columns" else np.asarray(M.values)
    tree = single_linkage(L, D.names)
    return list(tree.leaf_order), tree


def hsp_from_distance(D: DistanceMatrix, cov: CovEstimate, cfg: HspConfig = HspConfig()) -> WeightVector:
    if D.names != cov.names:
        raise ShapeMismatch("distance and covariance name orders differ")
    order, tree = tree_order(D, cfg)
    wv = recursive_bisection(cov, order, cfg.bounds)
    diag = dict(wv.diagnostics, method="hsp", leaf_order=[D.names[i] for i in order],
                linkage=tree.merges.tolist())
    return replace(wv, diagnostics=diag)


def hsp_from_sensitivity(S: SensitivityMatrix, cov: CovEstimate, cfg: HspConfig = HspConfig()) -> WeightVector:
    from .geometry import sensitivity_distance
    return hsp_from_distance(sensitivity_distance(S), cov, cfg)


def correlation_distance(cov: CovEstimate) -> DistanceMatrix:
    """sqrt(0.5 (1 - rho)) from a covariance matrix."""
    V = np.asarray(cov.matrix)
    sd = np.sqrt(np.diag(V))
    if np.any(~(sd > 0)):
        raise ZeroVariance(cov.names[int(np.argmin(sd))])
    rho = np.clip(V / np.outer(sd, sd), -1.0, 1.0)
    D = np.sqrt(np.clip(0.5 * (1.0 - rho), 0.0, None))
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(cov.names, 0.5 * (D + D.T), "correlation")


def hrp_weights(cov: CovEstimate, bounds=(0.03, 0.10), distance: DistanceMatrix | None = None) -> WeightVector:
    """Hierarchical risk parity; ``distance`` overrides the correlation distance."""
    D = correlation_distance(cov) if distance is None else distance
    wv = hsp_from_distance(D, cov, HspConfig(psd_repair=False, bounds=bounds))
    return replace(wv, diagnostics=dict(wv.diagnostics, method="hrp"))


@dataclass(frozen=True)
class PipelineConfig:
    """Everything ``hsp_weights`` needs to go from raw panels to weights."""

    selection: object = None          # SelectionConfig, or None with fixed drivers
    drivers: tuple | None = None      # skip selection and use these
    sensitivity_window: int = 125
    lag: int = 0
    model: str = "linear"
    aggregation: str = "mean"
    scope: str = "in"
    network: object = None            # NetworkSpec
    hsp: HspConfig = HspConfig()
    selection_window: int = 125


def hsp_weights(assets: ReturnPanel, drivers: ReturnPanel, cfg: PipelineConfig = PipelineConfig(),
                distance_override: DistanceMatrix | None = None) -> WeightVector:
    """Select drivers, fit sensitivities, order by sensitivity distance, bisect.

    Uses every row of the panels as history: callers slice to the decision
    date first. The covariance comes from the trailing ``cov_window`` rows.
    """
    from .driver_selection import SelectionConfig, select_drivers
    from .geometry import sensitivity_distance
    from .market_data import WindowSpec
    from .sensitivity_models import NetworkSpec, estimate_sensitivities

    end = assets.dates[-1]
    if cfg.drivers is not None:
        chosen = tuple(cfg.drivers)
    else:
        sel = cfg.selection or SelectionConfig()
        sel = replace(sel, window=WindowSpec(end, min(cfg.selection_window, assets.n_rows)))
        chosen = select_drivers(assets, drivers, sel).selected
    cov = sample_cov(assets, cfg.hsp.cov_window)
    if distance_override is None:
        S, _ = estimate_sensitivities(assets, drivers.select(list(chosen)),
                                      WindowSpec(end, cfg.sensitivity_window, cfg.lag),
                                      cfg.model, cfg.aggregation, cfg.scope,
                                      cfg.network or NetworkSpec())
        D = sensitivity_distance(S)
    else:
        D = distance_override
    wv = hsp_from_distance(D, cov, cfg.hsp)
    return replace(wv, diagnostics=dict(wv.diagnostics, drivers=list(chosen)))


# -- distance-based weights ---------------------------------------------------


def _matrix(D) -> tuple[np.ndarray, tuple]:
    if isinstance(D, DistanceMatrix):
        return np.asarray(D.values, float), D.names
    if isinstance(D, CovEstimate):
        return np.asarray(D.matrix, float), D.names
    A = np.asarray(D, float)
    return A, tuple(f"a{i}" for i in range(A.shape[0]))


def closed_form_distance_weights(D, mode: str = "inverse", cond_limit: float = 1e12) -> WeightVector:
    """w = D^-1 1 / (1' D^-1 1). ``mode='pinv'`` uses an eigen pseudoinverse."""
    A, names = _matrix(D)
    ones = np.ones(A.shape[0])
    if mode == "inverse":
        if not np.isfinite(np.linalg.cond(A)) or np.linalg.cond(A) > cond_limit:
            raise SingularMatrix("distance matrix is singular; regularize it or use mode='pinv'")
        x = np.linalg.solve(A, ones)
    elif mode == "pinv":
        lam, V = np.linalg.eigh(0.5 * (A + A.T))
        cut = 1e-10 * np.abs(lam).max(initial=0.0)
        inv = np.where(np.abs(lam) > cut, 1.0 / np.where(lam == 0, 1.0, lam), 0.0)
        x = (V * inv) @ (V.T @ ones)
    else:
        raise ValueError("mode must be 'inverse' or 'pinv'")
    denom = ones @ x
    if abs(denom) < 1e-300 or not np.isfinite(denom):
        raise SingularMatrix("1' D^-1 1 vanishes; the budget constraint cannot be met")
    w = x / denom
    return WeightVector(names, w, None, {"method": "closed_form", "mode": mode, "lambda": 2.0 / denom})


def regularize_distance(D, lambda_reg: float) -> DistanceMatrix:
    """D + lambda I."""
    if not lambda_reg > 0:
        raise ValueError("lambda_reg must be positive")
    A, names = _matrix(D)
    metric = D.metric if isinstance(D, DistanceMatrix) else "euclidean"
    return DistanceMatrix(names, A + lambda_reg * np.eye(A.shape[0]), metric, "repaired")


def qp_solve(M, c=None, bounds=None, tol: float = 1e-7, max_iter: int = 100_000):
    """min w'Mw - c'w subject to sum(w) = 1 and optional bounds.

    Without bounds the bordered KKT system is solved directly; with bounds an
    accelerated projected-gradient method runs on the capped simplex. Returns
    ``(w, info)`` with the KKT residual in ``info``.
    """
    M = 0.5 * (np.asarray(M, float) + np.asarray(M, float).T)
    n = M.shape[0]
    c = np.zeros(n) if c is None else np.asarray(c, float)
    b = Bounds.make(n, bounds)
    if not b.active:
        K = np.zeros((n + 1, n + 1))
        K[:n, :n] = 2.0 * M
        K[:n, n] = K[n, :n] = 1.0
        try:
            sol = np.linalg.solve(K, np.concatenate([c, [1.0]]))
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix(f"KKT system is singular: {exc}") from exc
        w, nu = sol[:n], sol[n]
        res = float(np.abs(2.0 * M @ w - c + nu).max(initial=0.0))
        return w, {"solver": "kkt", "kkt_residual": res, "iterations": 0}
    b.check()
    lo, hi = b.finite()
    lmax = float(np.linalg.eigvalsh(M)[-1]) if n else 0.0
    # rescale so the stopping tolerance means the same thing for any units of M
    scale = lmax if lmax > 0 else max(float(np.abs(c).max(initial=0.0)), 1.0)
    w0 = kernels.project_capped_simplex(np.full(n, 1.0 / n), lo, hi)
    w, it, res = kernels.pgd_qp(M / scale, c / scale, lo, hi, w0, 0.5, max_iter, tol)
    return np.asarray(w), {"solver": "projected_gradient", "kkt_residual": float(res) * scale,
                           "iterations": int(it), "step": 0.5 / scale}


def qp_distance_weights(D, bounds=None, lam: float = 1.0, cov: CovEstimate | None = None,
                        tol: float = 1e-7) -> WeightVector:
    """min w'(Sigma + lam D)w, or w'Dw when no covariance is given."""
    A, names = _matrix(D)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    M = A if cov is None else np.asarray(cov.matrix) + lam * A
    w, info = qp_solve(M, None, bounds, tol)
    b = Bounds.make(len(names), bounds)
    return WeightVector(names, _tidy(w, b), b if b.active else None,
                        dict(info, method="qp", objective=float(w @ M @ w)))


def _tidy(w: np.ndarray, b: Bounds) -> np.ndarray:
    """Remove round-off drift from the budget and box."""
    if b.active:
        w = np.clip(w, b.lower, b.upper)
        return kernels.project_capped_simplex(w, *b.finite()) if abs(w.sum() - 1.0) > 1e-12 else w
    return w / w.sum()


# -- CVaR ---------------------------------------------------------------------


def empirical_var_cvar(losses: np.ndarray, alpha: float) -> tuple[float, float]:
    """Lower alpha-quantile of losses and the Rockafellar-Uryasev CVaR at it."""
    L = np.sort(np.asarray(losses, float))
    T = L.size
    k = int(np.ceil(alpha * T - 1e-12)) - 1
    var = float(L[max(k, 0)])
    cvar = var + float(np.maximum(L - var, 0.0).sum()) / ((1.0 - alpha) * T)
    return var, cvar


def cvar_optimize(p: CvarProblem):
    """Minimize zeta + sum(z) / ((1 - alpha) T) over (w, zeta, z) with z >= -Rw - zeta, z >= 0.

    Returns ``(WeightVector, cvar, zeta)``. Among optimal thresholds the
    smallest one (the lower empirical quantile) is reported.
    """
    R = p.scenarios
    T, n = R.shape
    b = Bounds.make(n, p.bounds)
    b.check()
    scale = 1.0 / ((1.0 - p.alpha) * T)
    cost = np.concatenate([np.zeros(n), [1.0], np.full(T, scale)])
    A_ub = np.hstack([-R, -np.ones((T, 1)), -np.eye(T)])
    A_eq = np.concatenate([np.ones(n), [0.0], np.zeros(T)])[None, :]
    var_bounds = ([(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
                   for lo, hi in zip(b.lower, b.upper)] + [(None, None)] + [(0.0, None)] * T)
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(T), A_eq=A_eq, b_eq=[1.0], bounds=var_bounds,
                  method="highs", options={"primal_feasibility_tolerance": 1e-9,
                                           "dual_feasibility_tolerance": 1e-9})
    if res.status != 0:
        raise Infeasible(f"CVaR LP failed: {res.message}", status=int(res.status))
    w = _tidy(res.x[:n], b)
    zeta, cvar = empirical_var_cvar(-R @ w, p.alpha)
    wv = WeightVector(p.names, w, b if b.active else None,
                      {"method": "cvar", "lp_objective": float(res.fun), "cvar": cvar, "zeta": zeta,
                       "alpha": p.alpha})
    return wv, cvar, zeta


# -- mean-variance benchmarks -------------------------------------------------


def equal_weight(names: Sequence[str], bounds=None) -> WeightVector:
    n = len(names)
    b = Bounds.make(n, bounds)
    w = np.full(n, 1.0 / n)
    if b.active:
        b.check()
        w = kernels.project_capped_simplex(w, *b.finite())
    return WeightVector(names, w, b if b.active else None, {"method": "equal_weight"})


def min_variance(cov: CovEstimate, bounds=(0.03, 0.10)) -> WeightVector:
    w, info = qp_solve(cov.matrix, None, bounds)
    b = Bounds.make(len(cov.names), bounds)
    return WeightVector(cov.names, _tidy(w, b), b if b.active else None, dict(info, method="min_variance"))


def quadratic_utility(mu, cov: CovEstimate, gamma: float = 1.0, bounds=(0.03, 0.10)) -> WeightVector:
    """max mu'w - (gamma / 2) w' Sigma w."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    w, info = qp_solve(0.5 * gamma * np.asarray(cov.matrix), np.asarray(mu, float), bounds)
    b = Bounds.make(len(cov.names), bounds)
    return WeightVector(cov.names, _tidy(w, b), b if b.active else None,
                        dict(info, method="quadratic_utility", gamma=gamma))


def efficient_frontier(mu, cov: CovEstimate, bounds=(0.03, 0.10), n_points: int = 41):
    """Frontier portfolios traced by the risk-aversion sweep, lowest risk first.

    Returns a list of (vol, mean, weights) triples, min-variance included.
    """
    mu = np.asarray(mu, float)
    V = np.asarray(cov.matrix)
    pts = [min_variance(cov, bounds).weights]
    scale = max(float(np.abs(mu).max(initial=0.0)), 1e-12) / max(float(np.trace(V)) / len(mu), 1e-300)
    for g in scale * np.logspace(3, -3, n_points):
        pts.append(quadratic_utility(mu, cov, g, bounds).weights)
    return [(float(np.sqrt(max(w @ V @ w, 0.0))), float(mu @ w), w) for w in pts]


def max_sharpe(mu, cov: CovEstimate, bounds=(0.03, 0.10), risk_free: float = 0.0,
               n_points: int = 41) -> WeightVector:
    """Best Sharpe ratio over the frontier sweep (risk-free rate fixed)."""
    front = efficient_frontier(mu, cov, bounds, n_points)
    best = max(range(len(front)),
               key=lambda i: (front[i][1] - risk_free) / front[i][0] if front[i][0] > 0 else -np.inf)
    vol, mean, w = front[best]
    return WeightVector(cov.names, w, Bounds.make(len(w), bounds) if bounds is not None else None,
                        {"method": "max_sharpe", "vol": vol, "mean": mean})


def target_return(mu, cov: CovEstimate, target: float, bounds=(0.03, 0.10), n_points: int = 41) -> WeightVector:
    """Lowest-variance frontier point whose mean reaches ``target`` (or the max-mean point)."""
    front = efficient_frontier(mu, cov, bounds, n_points)
    ok = [f for f in front if f[1] >= target - 1e-15]
    vol, mean, w = min(ok, key=lambda f: f[0]) if ok else max(front, key=lambda f: f[1])
    return WeightVector(cov.names, w, Bounds.make(len(w), bounds) if bounds is not None else None,
                        {"method": "target_return", "target": target, "vol": vol, "mean": mean,
                         "reached": bool(ok)})


# -- risk mappings --------------------------------------------------------------


def _svals(S) -> np.ndarray:
    return np.asarray(S.values if isinstance(S, SensitivityMatrix) else S, float)


def map_expected_return(S, driver_forecast) -> np.ndarray:
    B, f = _svals(S), np.asarray(driver_forecast, float)
    if B.shape[1] != f.size:
        raise ShapeMismatch(f"{B.shape[1]} drivers vs forecast of length {f.size}")
    return B @ f


def map_covariance(S, driver_cov, residual_var) -> CovEstimate:
    """B Sigma_D B' + diag(residual)."""
    B, SD, rv = _svals(S), np.asarray(driver_cov, float), np.asarray(residual_var, float)
    n, m = B.shape
    if SD.shape != (m, m) or rv.shape != (n,):
        raise ShapeMismatch("driver covariance or residual variance has the wrong shape")
    M = B @ SD @ B.T + np.diag(rv)
    names = S.assets if isinstance(S, SensitivityMatrix) else tuple(f"a{i}" for i in range(n))
    return CovEstimate(names, 0.5 * (M + M.T))


def map_volatility(S, driver_cov) -> np.ndarray:
    B, SD = _svals(S), np.asarray(driver_cov, float)
    if SD.shape != (B.shape[1],) * 2:
        raise ShapeMismatch("driver covariance has the wrong shape")
    q = np.einsum("ij,jk,ik->i", B, SD, B)
    if np.any(q < -1e-12 * max(1.0, np.abs(q).max(initial=0.0))):
        raise NegativeQuadraticForm("driver covariance is not positive semi-definite")
    return np.sqrt(np.clip(q, 0.0, None))


def directional_attribution(S, w, driver_vols) -> np.ndarray:
    """Risk_j = sum_i w_i S_ij sigma_j."""
    B = _svals(S)
    wv = np.asarray(w.weights if isinstance(w, WeightVector) else w, float)
    dv = np.asarray(driver_vols, float)
    if wv.size != B.shape[0] or dv.size != B.shape[1]:
        raise ShapeMismatch("weights or driver vols do not match the sensitivity matrix")
    return (wv @ B) * dv


def copula_var(means, stds, corr, w, alpha: float = 0.95, n_samples: int = 100_000, seed: int = 0):
    """Gaussian-copula Monte Carlo VaR of sum_i w_i s_i with normal marginals.

    The correlation is PSD-repaired and factored by eigendecomposition, so
    singular (for example perfectly correlated) inputs are accepted.
    Returns ``(VaR, summary)`` with VaR = -Q_{1-alpha}(portfolio samples).
    """
    mu = np.atleast_1d(np.asarray(means, float))
    sd = np.atleast_1d(np.asarray(stds, float))
    C = np.atleast_2d(np.asarray(corr, float))
    wv = np.atleast_1d(np.asarray(w.weights if isinstance(w, WeightVector) else w, float))
    n = mu.size
    if sd.shape != (n,) or C.shape != (n, n) or wv.shape != (n,):
        raise ShapeMismatch("inconsistent copula inputs")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    C = nearest_psd(C)
    lam, V = np.linalg.eigh(C)
    if lam[0] < -1e-10 or np.any(np.abs(np.diag(C) - 1.0) > 1e-6):
        raise NonPsdCorrelation("correlation matrix is not a valid correlation after repair")
    L = V * np.sqrt(np.clip(lam, 0.0, None))
    Z = rng.normals(seed, n_samples * n, "copula").reshape(n_samples, n) @ L.T
    U = np.clip(norm.cdf(Z), 1e-16, 1.0 - 1e-16)
    samples = mu + sd * norm.ppf(U)
    r = samples @ wv
    var = float(-np.quantile(r, 1.0 - alpha))
    return var, {"mean": float(r.mean()), "std": float(r.std()), "n_samples": n_samples,
                 "alpha": alpha, "cvar": float(-r[r <= -var].mean()) if np.any(r <= -var) else var}
