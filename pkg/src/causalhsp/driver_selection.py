"""Common-driver selection.

Five procedures pick ``m`` common drivers for a set of assets:

* ``rccp_rank``: correlation relevance counts and strengths, ranked
  lexicographically.
* ``rccp_threshold``: candidates must clear a lag-0 and a lag-1 correlation
  threshold for an asset to count it.
* ``greedy_gs`` and ``dp_gs``: minimize the pairwise screen-off objective
  G(S) by forward search or by a knapsack-style table.
* ``max_likelihood``: maximize a Gaussian likelihood of the assets under a
  linear common-cause model.

All rankings break ties by (count desc, strength desc, name asc).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (DegenerateSeries, EmptySelection, ShapeMismatch, SingularCovariance,
                     SingularDesign, TableTooLarge)
from .market_data import ReturnPanel, WindowSpec, slice_window

MODES = ("rccp_rank", "rccp_threshold", "greedy_gs", "dp_gs", "max_likelihood")
MODE_ALIASES = {"rank": "rccp_rank", "threshold": "rccp_threshold", "greedy": "greedy_gs",
                "dp": "dp_gs", "ml": "max_likelihood"}
RIDGE = 1e-8
COLLINEAR_CORR = 0.999
DP_TABLE_LIMIT = 10**6


@dataclass(frozen=True)
class SelectionConfig:
    m: int = 3
    epsilon: float = 0.5
    t0: float = 0.0
    t1: float = 0.0
    window: WindowSpec | None = None
    mode: str = "rccp_rank"
    exclude: tuple = ()
    screen_collinear: bool = True
    gs_estimator: str = "residual"
    exhaustive: bool = False
    sccs_bound: float | None = None

    def __post_init__(self):
        mode = MODE_ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise ValueError(f"unknown selection mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "exclude", tuple(self.exclude))
        if int(self.m) < 1:
            raise ValueError("m must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.gs_estimator not in GS_ESTIMATORS:
            raise ValueError(f"unknown G(S) estimator {self.gs_estimator!r}")


@dataclass(frozen=True)
class SelectionScorecard:
    candidates: tuple
    assets: tuple
    C: np.ndarray
    R: np.ndarray
    repeatedness: np.ndarray
    strength: np.ndarray
    ranking: tuple
    selected: tuple
    mode: str
    epsilon: float
    objective: float | None = None
    constraint_satisfied: bool | None = None
    flagged_collinear: tuple = ()
    extra: dict = field(default_factory=dict)

    def rank_of(self, name: str) -> int:
        return self.ranking.index(name) + 1

    def summary(self) -> dict:
        out = {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "selected": list(self.selected),
            "ranking": list(self.ranking),
            "objective": self.objective,
            "constraint_satisfied": self.constraint_satisfied,
            "flagged_collinear": list(self.flagged_collinear),
        }
        out.update({k: v for k, v in self.extra.items() if not isinstance(v, np.ndarray)})
        return out


@dataclass(frozen=True)
class MlCauseModel:
    causes: tuple
    intercept: np.ndarray       # per asset
    alpha: np.ndarray           # n x s
    noise_var: np.ndarray       # n
    cause_var: np.ndarray       # s
    cause_mean: np.ndarray      # s
    covariance: np.ndarray      # n x n implied
    log_likelihood: float

    @property
    def asset_var(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    @property
    def correlation(self) -> np.ndarray:
        sd = np.sqrt(self.asset_var)
        return self.covariance / np.outer(sd, sd)


# -- correlation scorecards -------------------------------------------------


def _standardize(X: np.ndarray, names: Sequence[str]) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    sd = np.sqrt((Xc * Xc).mean(axis=0))
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise DegenerateSeries(names[bad[0]])
    return Xc / sd


def correlation_matrix(candidates: np.ndarray, assets: np.ndarray,
                       candidate_names: Sequence[str], asset_names: Sequence[str]) -> np.ndarray:
    """Pearson correlations, K x n (candidates by assets)."""
    Zx = _standardize(np.asarray(candidates, float), candidate_names)
    Zy = _standardize(np.asarray(assets, float), asset_names)
    C = Zx.T @ Zy / Zx.shape[0]
    return np.clip(C, -1.0, 1.0)


def _lex_order(counts, strengths, names) -> list[int]:
    return sorted(range(len(names)), key=lambda k: (-counts[k], -strengths[k], names[k]))


def _take(ranking: Sequence[str], m: int, exclude: set) -> tuple:
    return tuple([c for c in ranking if c not in exclude][:m])


def scorecard_from_correlations(C, candidate_names: Sequence[str], asset_names: Sequence[str],
                                m: int, epsilon: float, exclude: Sequence[str] = (),
                                screen_collinear: bool = True) -> SelectionScorecard:
    """Inverse-RCCP ranking from a precomputed K x n correlation matrix."""
    C = np.asarray(C, float)
    names = tuple(candidate_names)
    if C.shape != (len(names), len(asset_names)):
        raise ShapeMismatch(f"correlation matrix {C.shape} vs {len(names)} x {len(asset_names)}")
    absC = np.abs(C)
    R = (absC >= epsilon).astype(np.int64)
    counts = R.sum(axis=1)
    strengths = (absC * R).sum(axis=1)
    ranking = tuple(names[k] for k in _lex_order(counts, strengths, names))
    flagged = tuple(n for n, row in zip(names, absC) if np.any(row > COLLINEAR_CORR))
    barred = set(exclude) | (set(flagged) if screen_collinear else set())
    selected = _take(ranking, m, barred)
    if not selected:
        raise EmptySelection("every candidate is excluded")
    return SelectionScorecard(names, tuple(asset_names), C, R, counts, strengths, ranking,
                              selected, "rccp_rank", float(epsilon), flagged_collinear=flagged)


def _windowed(assets: ReturnPanel, candidates: ReturnPanel, cfg: SelectionConfig):
    if assets.n_rows != candidates.n_rows or not np.array_equal(assets.dates, candidates.dates):
        raise ShapeMismatch("asset and candidate panels must share the same dates")
    if cfg.window is not None:
        w = WindowSpec(cfg.window.end, cfg.window.length, 0)
        assets, candidates = slice_window(assets, w), slice_window(candidates, w)
    return assets.require_complete(), candidates.require_complete()


def _base_card(assets: ReturnPanel, candidates: ReturnPanel, cfg: SelectionConfig):
    C = correlation_matrix(candidates.values, assets.values, candidates.names, assets.names)
    return scorecard_from_correlations(C, candidates.names, assets.names, cfg.m, cfg.epsilon,
                                       (), cfg.screen_collinear)


def _barred(card: SelectionScorecard, cfg: SelectionConfig) -> set:
    return set(cfg.exclude) | (set(card.flagged_collinear) if cfg.screen_collinear else set())


def select_rccp_rank(assets: ReturnPanel, candidates: ReturnPanel, cfg: SelectionConfig) -> SelectionScorecard:
    assets, candidates = _windowed(assets, candidates, cfg)
    card = _base_card(assets, candidates, cfg)
    selected = _take(card.ranking, cfg.m, _barred(card, cfg))
    if not selected:
        raise EmptySelection("every candidate is excluded")
    return replace(card, selected=selected)


def select_rccp_threshold(assets: ReturnPanel, candidates: ReturnPanel, cfg: SelectionConfig) -> SelectionScorecard:
    """Count, per candidate, the assets where it clears both lag thresholds.

    A candidate is specific for an asset when corr(asset_t, cand_t) > t0 and
    corr(asset_t, cand_{t-1}) > t1. Correlations are signed, as written.
    """
    assets, candidates = _windowed(assets, candidates, cfg)
    card = _base_card(assets, candidates, cfg)
    X, Y = np.asarray(candidates.values), np.asarray(assets.values)
    C1 = correlation_matrix(X[:-1], Y[1:], candidates.names, assets.names)
    passes = ((card.C > cfg.t0) & (C1 > cfg.t1)).astype(np.int64)
    counts = passes.sum(axis=1)
    strengths = (card.C * passes).sum(axis=1)
    names = candidates.names
    ranking = tuple(names[k] for k in _lex_order(counts, strengths, names))
    barred = _barred(card, cfg) | {names[k] for k in range(len(names)) if counts[k] == 0}
    selected = _take(ranking, cfg.m, barred)
    if not selected:
        raise EmptySelection("no candidate clears both thresholds for any asset",
                             t0=cfg.t0, t1=cfg.t1)
    return replace(card, R=passes, repeatedness=counts, strength=strengths, ranking=ranking,
                   selected=selected, mode="rccp_threshold", extra={"C_lag1": C1})


# -- G(S) --------------------------------------------------------------------


def _design(Z: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(Z.shape[0]), Z])


def _ridge_fit(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Fitted values of Y on X with a tiny ridge on the normal equations."""
    Zc = X[:, 1:] - X[:, 1:].mean(axis=0)
    if X.shape[0] <= X.shape[1] or np.linalg.matrix_rank(Zc) < Zc.shape[1]:
        raise SingularDesign("regression design is rank deficient", columns=X.shape[1], rows=X.shape[0])
    A = X.T @ X
    A[np.diag_indices_from(A)] += RIDGE
    coef = np.linalg.solve(A, X.T @ Y)
    return X @ coef


def gs_pair_terms(Y: np.ndarray, Z: np.ndarray, estimator: str = "fitted") -> np.ndarray:
    """n x n matrix of signed pair terms whose off-diagonal |.| sum is G(S).

    ``fitted``   mean(Yhat_i Yhat_j) - mean(Yhat_i) mean(Yhat_j)
    ``residual`` mean(e_i e_j), the conditional covariance given S
    ``product``  mean of the regression fit of Y_i Y_j on S minus
                 mean(Yhat_i) mean(Yhat_j), the literal product-target form
    """
    Y = np.asarray(Y, float)
    Z = np.asarray(Z, float).reshape(Y.shape[0], -1)
    X = _design(Z)
    Yhat = _ridge_fit(X, Y)
    T = Y.shape[0]
    if estimator == "fitted":
        mu = Yhat.mean(axis=0)
        return Yhat.T @ Yhat / T - np.outer(mu, mu)
    if estimator == "residual":
        E = Y - Yhat
        return E.T @ E / T
    if estimator == "product":
        n = Y.shape[1]
        iu = np.triu_indices(n, 1)
        prods = Y[:, iu[0]] * Y[:, iu[1]]
        joint = _ridge_fit(X, prods).mean(axis=0)
        mu = Yhat.mean(axis=0)
        out = np.zeros((n, n))
        out[iu] = joint - mu[iu[0]] * mu[iu[1]]
        return out + out.T
    raise ValueError(f"unknown estimator {estimator!r}")


GS_ESTIMATORS = ("fitted", "residual", "product")


def _g_from_terms(P: np.ndarray) -> float:
    return float(np.abs(P).sum() - np.abs(np.diag(P)).sum())


def score_gs(assets: ReturnPanel, subset: Sequence[str], candidates: ReturnPanel,
             estimator: str = "fitted") -> float:
    """G(S) = sum over ordered pairs i != j of the absolute pair term."""
    if not subset:
        raise ValueError("subset must be non-empty")
    if assets.n_rows != candidates.n_rows:
        raise ShapeMismatch("panels must be aligned")
    Y = np.asarray(assets.require_complete().values)
    if Y.shape[1] < 2:
        return 0.0
    Z = np.asarray(candidates.select(list(subset)).require_complete().values)
    return _g_from_terms(gs_pair_terms(Y, Z, estimator))


class _GCache:
    def __init__(self, Y, X, names, estimator):
        self.Y, self.X, self.names, self.estimator = Y, X, names, estimator
        self.idx = {n: k for k, n in enumerate(names)}
        self.memo = {}

    def __call__(self, subset) -> float:
        key = tuple(sorted(subset))
        if key not in self.memo:
            if self.Y.shape[1] < 2:
                self.memo[key] = 0.0
            else:
                Z = self.X[:, [self.idx[n] for n in key]]
                self.memo[key] = _g_from_terms(gs_pair_terms(self.Y, Z, self.estimator))
        return self.memo[key]


def _eligible(card: SelectionScorecard, cfg: SelectionConfig) -> list[str]:
    barred = _barred(card, cfg)
    pool = [c for c in card.candidates if c not in barred]
    if not pool:
        raise EmptySelection("every candidate is excluded")
    return pool


def select_greedy_gs(assets: ReturnPanel, candidates: ReturnPanel, cfg: SelectionConfig) -> SelectionScorecard:
    """Forward search: add the candidate giving the smallest G until m or no gain.

    G of the empty set is taken as +inf, so the first step always adds.
    """
    assets, candidates = _windowed(assets, candidates, cfg)
    card = _base_card(assets, candidates, cfg)
    G = _GCache(np.asarray(assets.values), np.asarray(candidates.values), candidates.names,
                cfg.gs_estimator)
    pool = _eligible(card, cfg)
    chosen: list[str] = []
    path: list[float] = []
    current = math.inf
    while len(chosen) < cfg.m and len(chosen) < len(pool):
        trials = sorted((G(chosen + [c]), c) for c in pool if c not in chosen)
        best, name = trials[0]
        if not best < current:
            break
        chosen.append(name)
        path.append(best)
        current = best
    singles = {c: G([c]) for c in candidates.names}
    rest = sorted((c for c in candidates.names if c not in chosen), key=lambda c: (singles[c], c))
    return replace(card, ranking=tuple(chosen) + tuple(rest), selected=tuple(chosen),
                   mode="greedy_gs", objective=current,
                   constraint_satisfied=bool(current <= cfg.m * cfg.epsilon),
                   extra={"score": -current, "path": path, "estimator": cfg.gs_estimator,
                          "sccs_bound": cfg.sccs_bound})


def dp_table(deltas: Sequence[float], m: int):
    """F[k, j] = min(F[k-1, j], F[k-1, j-1] + delta_k); returns (F, chosen indices)."""
    K = len(deltas)
    if K * m > DP_TABLE_LIMIT:
        raise TableTooLarge(f"K*m = {K * m} exceeds {DP_TABLE_LIMIT}", K=K, m=m)
    F = np.full((K + 1, m + 1), np.inf)
    F[:, 0] = 0.0
    take = np.zeros((K + 1, m + 1), dtype=bool)
    for k in range(1, K + 1):
        for j in range(1, m + 1):
            skip, use = F[k - 1, j], F[k - 1, j - 1] + deltas[k - 1]
            # prefer skipping on ties so earlier candidates win
            if use < skip:
                F[k, j], take[k, j] = use, True
            else:
                F[k, j] = skip
    chosen, j = [], m
    for k in range(K, 0, -1):
        if j and take[k, j]:
            chosen.append(k - 1)
            j -= 1
    return F, sorted(chosen)


def select_dp_gs(assets: ReturnPanel, candidates: ReturnPanel, cfg: SelectionConfig) -> SelectionScorecard:
    """Table search with the context-free marginal cost delta(k) = G({k})."""
    assets, candidates = _windowed(assets, candidates, cfg)
    card = _base_card(assets, candidates, cfg)
    pool = _eligible(card, cfg)
    m = min(cfg.m, len(pool))
    if len(pool) * m > DP_TABLE_LIMIT:
        raise TableTooLarge(f"K*m = {len(pool) * m} exceeds {DP_TABLE_LIMIT}", K=len(pool), m=m)
    G = _GCache(np.asarray(assets.values), np.asarray(candidates.values), candidates.names,
                cfg.gs_estimator)
    deltas = [G([c]) for c in pool]
    F, idx = dp_table(deltas, m)
    chosen = tuple(pool[i] for i in idx)
    order = sorted(candidates.names, key=lambda c: (G([c]), c))
    ranking = tuple(c for c in order if c in chosen) + tuple(c for c in order if c not in chosen)
    objective = G(list(chosen))
    return replace(card, ranking=ranking, selected=tuple(c for c in ranking if c in chosen),
                   mode="dp_gs", objective=objective,
                   constraint_satisfied=bool(objective <= cfg.m * cfg.epsilon),
                   extra={"dp_cost": float(F[len(pool), m]), "deltas": dict(zip(pool, deltas)),
                          "estimator": cfg.gs_estimator, "sccs_bound": cfg.sccs_bound})


# -- maximum likelihood ------------------------------------------------------


def fit_ml_cause_model(Y: np.ndarray, Z: np.ndarray, causes: Sequence[str] = ()) -> MlCauseModel:
    """Least-squares alphas and the implied Gaussian likelihood of the assets.

    Each asset follows X_i = c_i + sum_k alpha_ik Z_k + eps_i. The likelihood
    uses per-row means c_i + alpha_i . Z_t with covariance
    A diag(Var Z) A' + diag(sigma_eps^2), as the linear common-cause model
    implies. Variances are maximum-likelihood (divide by T).
    """
    Y = np.asarray(Y, float)
    Z = np.asarray(Z, float).reshape(Y.shape[0], -1)
    T, n = Y.shape
    X = _design(Z)
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    mean = X @ coef
    resid = Y - mean
    noise_var = (resid * resid).mean(axis=0)
    alpha = coef[1:].T
    zvar = Z.var(axis=0)
    cov = (alpha * zvar) @ alpha.T + np.diag(noise_var)
    cov = _shrink_to_pd(cov)
    L = np.linalg.cholesky(cov)
    u = np.linalg.solve(L, resid.T)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    ll = -0.5 * (T * n * math.log(2 * math.pi) + T * logdet + float((u * u).sum()))
    return MlCauseModel(tuple(causes), coef[0], alpha, noise_var, zvar, Z.mean(axis=0), cov, ll)


def _shrink_to_pd(cov: np.ndarray) -> np.ndarray:
    """Shrink the implied correlation toward identity until Cholesky succeeds."""
    sd = np.sqrt(np.diag(cov))
    if np.any(~(sd > 0)):
        raise SingularCovariance("implied asset variance is zero")
    corr = cov / np.outer(sd, sd)
    for lam in (0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2):
        trial = (1 - lam) * corr + lam * np.eye(len(sd))
        try:
            np.linalg.cholesky(trial)
        except np.linalg.LinAlgError:
            continue
        return trial * np.outer(sd, sd)
    raise SingularCovariance("implied correlation matrix is not positive definite")


def select_max_likelihood(assets: ReturnPanel, candidates: ReturnPanel, cfg: SelectionConfig) -> SelectionScorecard:
    assets, candidates = _windowed(assets, candidates, cfg)
    card = _base_card(assets, candidates, cfg)
    pool = _eligible(card, cfg)
    m = min(cfg.m, len(pool))
    Y, X = np.asarray(assets.values), np.asarray(candidates.values)
    col = {n: k for k, n in enumerate(candidates.names)}

    def ll(subset) -> float:
        return fit_ml_cause_model(Y, X[:, [col[c] for c in subset]], subset).log_likelihood

    singles = {c: ll([c]) for c in pool}
    if cfg.exhaustive:
        if len(pool) > 15:
            raise ValueError("exhaustive search is limited to 15 candidates")
        # max() keeps the first maximiser, i.e. the lexicographically smallest subset
        chosen = list(max(itertools.combinations(sorted(pool), m), key=lambda s: ll(list(s))))
    else:
        chosen = []
        while len(chosen) < m:
            trials = [(ll(chosen + [c]), c) for c in pool if c not in chosen]
            top = max(v for v, _ in trials)
            chosen.append(min(c for v, c in trials if v == top))
    value = ll(chosen)
    rest = sorted((c for c in pool if c not in chosen), key=lambda c: (-singles[c], c))
    barred = [c for c in candidates.names if c not in pool]
    return replace(card, ranking=tuple(chosen) + tuple(rest) + tuple(barred),
                   selected=tuple(chosen), mode="max_likelihood", objective=value,
                   extra={"log_likelihood": value, "single_log_likelihood": singles})


_DISPATCH = {
    "rccp_rank": select_rccp_rank,
    "rccp_threshold": select_rccp_threshold,
    "greedy_gs": select_greedy_gs,
    "dp_gs": select_dp_gs,
    "max_likelihood": select_max_likelihood,
}


def select_drivers(assets: ReturnPanel, candidates: ReturnPanel, cfg: SelectionConfig) -> SelectionScorecard:
    return _DISPATCH[cfg.mode](assets, candidates, cfg)
