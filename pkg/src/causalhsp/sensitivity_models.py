"""Per-asset return models on common drivers and their input sensitivities.

Two model families:

``LinearSensitivityModel``
    OLS with intercept; the sensitivity of every row is the beta vector.
``Network``
    A small feed-forward net trained by mini-batch gradient descent. Input
    gradients come from an explicit reverse pass through the layers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonFiniteLoss, RankDeficient, ShapeMismatch, TooShort
from .market_data import ReturnPanel, WindowSpec, lagged_pair
from .rng import stream_key

LINEAR_RIDGE = 1e-10
GRID_LAYERS = (1, 2)
GRID_WIDTHS = (8, 16, 32)


def _lag_pairs(y: np.ndarray, X: np.ndarray, lag: int):
    y = np.asarray(y, float).ravel()
    X = np.asarray(X, float)
    X = X[:, None] if X.ndim == 1 else X
    if X.shape[0] != y.size:
        raise ShapeMismatch("asset and driver series differ in length")
    if lag:
        return y[lag:], X[:-lag]
    return y, X


# -- linear -------------------------------------------------------------------


@dataclass(frozen=True)
class LinearSensitivityModel:
    intercept: float
    betas: np.ndarray
    residual_var: float
    rmse: float
    n_obs: int
    lag: int = 0

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.atleast_2d(X) @ self.betas

    def input_gradients(self, X) -> np.ndarray:
        return np.tile(self.betas, (np.atleast_2d(X).shape[0], 1))


def fit_linear(y, X, lag: int = 0) -> LinearSensitivityModel:
    """OLS of ``y[t]`` on an intercept and ``X[t - lag]``."""
    y, X = _lag_pairs(y, X, lag)
    T, m = X.shape
    if T < m + 2:
        raise TooShort(f"need {m + 2} paired observations, have {T}", needed=m + 2, available=T)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    A = Xc.T @ Xc
    b = Xc.T @ yc
    if np.any(np.ptp(X, axis=0) == 0.0):
        raise RankDeficient("a driver is constant over the window; its beta is unidentified")
    if np.linalg.matrix_rank(Xc) < m:
        A = A + LINEAR_RIDGE * np.eye(m)
    try:
        beta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient(str(exc)) from exc
    if not np.all(np.isfinite(beta)):
        raise RankDeficient("non-finite coefficients after ridge fallback")
    resid = yc - Xc @ beta
    rv = float(resid @ resid / T)
    return LinearSensitivityModel(float(ym - xm @ beta), beta, rv, float(np.sqrt(rv)), T, lag)


# -- network ------------------------------------------------------------------

_ACTS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, h: (a > 0.0).astype(float)),
    "identity": (lambda a: a, lambda a, h: np.ones_like(a)),
}


@dataclass(frozen=True)
class NetworkSpec:
    hidden: tuple = (16,)
    activation: str = "tanh"
    seed: int = 0
    epochs: int = 500
    learning_rate: float = 1e-2
    batch_size: int = 32
    optimizer: str = "gd"
    lag: int = 0
    window: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if self.activation not in _ACTS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be 'gd' or 'adam'")

    def label(self) -> str:
        return f"{self.activation}[{'x'.join(map(str, self.hidden))}]"


def architecture_grid(base: NetworkSpec = NetworkSpec()) -> list[NetworkSpec]:
    """Every (depth, width) pair of the search grid, sharing ``base`` settings."""
    out = []
    for depth, width in itertools.product(GRID_LAYERS, GRID_WIDTHS):
        kw = {f: getattr(base, f) for f in base.__dataclass_fields__}
        kw["hidden"] = (width,) * depth
        out.append(NetworkSpec(**kw))
    return out


@dataclass
class Network:
    """Feed-forward net on standardized inputs; outputs in original units."""

    spec: NetworkSpec
    weights: list
    biases: list
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    history: list = field(default_factory=list)
    train_rmse: float = float("nan")
    valid_rmse: float = float("nan")

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    def _forward(self, Zin):
        act = _ACTS[self.spec.activation][0]
        pre, post = [], [Zin]
        h = Zin
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ W + b
            h = act(a)
            pre.append(a)
            post.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out[:, 0], pre, post

    def _scale_in(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.n_inputs:
            raise ShapeMismatch(f"expected {self.n_inputs} inputs, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs must be finite")
        return (X - self.x_mean) / self.x_scale

    def predict(self, X) -> np.ndarray:
        out, _, _ = self._forward(self._scale_in(X))
        return self.y_mean + self.y_scale * out

    def input_gradients(self, X) -> np.ndarray:
        """d(prediction)/d(input) for each row, by a reverse sweep."""
        out, pre, post = self._forward(self._scale_in(X))
        dact = _ACTS[self.spec.activation][1]
        g = np.broadcast_to(self.weights[-1][:, 0], (out.size, self.weights[-1].shape[0]))
        for W, a, h in zip(reversed(self.weights[:-1]), reversed(pre), reversed(post[1:])):
            g = (g * dact(a, h)) @ W.T
        return g * (self.y_scale / self.x_scale)


def _init_params(sizes: Sequence[int], seed: int, label: str):
    gen = np.random.Generator(np.random.Philox(key=stream_key(seed, "network-init", label)))
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(gen.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def _backprop(net: Network, Z, t):
    """Mean-squared-error loss and parameter gradients on standardized data."""
    out, pre, post = net._forward(Z)
    r = out - t
    loss = float(r @ r / r.size)
    dact = _ACTS[net.spec.activation][1]
    g = (2.0 / r.size) * r[:, None]
    gW, gb = [None] * len(net.weights), [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        gW[l] = post[l].T @ g
        gb[l] = g.sum(axis=0)
        if l:
            g = (g @ net.weights[l].T) * dact(pre[l - 1], post[l])
    return loss, gW, gb


def fit_network(y, X, spec: NetworkSpec = NetworkSpec(), valid=None) -> Network:
    """Train one architecture. ``valid`` is an optional (y, X) hold-out pair."""
    y, X = _lag_pairs(y, X, spec.lag)
    if y.size < 10:
        raise TooShort(f"need at least 10 rows to fit a network, have {y.size}", needed=10, available=y.size)
    x_mean, x_scale = X.mean(axis=0), X.std(axis=0)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    y_mean, y_scale = float(y.mean()), float(y.std())
    Ws, bs = _init_params([X.shape[1], *spec.hidden, 1], spec.seed, spec.label())
    if not y_scale > 0:
        # constant target: a zero output layer is already exact and gets zero gradients
        y_scale = 1.0
        Ws[-1][:] = 0.0
    net = Network(spec, Ws, bs, x_mean, x_scale, y_mean, y_scale)
    Z, t = (X - x_mean) / x_scale, (y - y_mean) / y_scale
    order_gen = np.random.Generator(np.random.Philox(key=stream_key(spec.seed, "network-batches", spec.label())))
    params = net.weights + net.biases
    if spec.optimizer == "adam":
        m1 = [np.zeros_like(p) for p in params]
        m2 = [np.zeros_like(p) for p in params]
    step = 0
    n = y.size
    for epoch in range(spec.epochs):
        perm = order_gen.permutation(n)
        for s in range(0, n, spec.batch_size):
            idx = perm[s:s + spec.batch_size]
            loss, gW, gb = _backprop(net, Z[idx], t[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss diverged at epoch {epoch}", spec=spec.label(),
                                    learning_rate=spec.learning_rate, epoch=epoch)
            grads = gW + gb
            step += 1
            if spec.optimizer == "adam":
                for p, g, a, v in zip(params, grads, m1, m2):
                    a *= 0.9
                    a += 0.1 * g
                    v *= 0.999
                    v += 0.001 * g * g
                    p -= spec.learning_rate * (a / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-8)
            else:
                for p, g in zip(params, grads):
                    p -= spec.learning_rate * g
        net.history.append(loss)
    net.train_rmse = float(np.sqrt(np.mean((net.predict(X) - y) ** 2)))
    if not np.isfinite(net.train_rmse):
        raise NonFiniteLoss("non-finite training error", spec=spec.label())
    if valid is not None:
        vy, vX = valid
        net.valid_rmse = float(np.sqrt(np.mean((net.predict(vX) - np.asarray(vy, float)) ** 2)))
    return net


def chronological_split(y, X, lag: int = 0, train_frac: float = 0.8):
    y, X = _lag_pairs(y, X, lag)
    cut = int(round(train_frac * y.size))
    return (y[:cut], X[:cut]), (y[cut:], X[cut:])


def fit_network_grid(y, X, base: NetworkSpec = NetworkSpec(), grid: Sequence[NetworkSpec] | None = None):
    """Train every architecture on the first 80% and keep the lowest validation RMSE.

    Returns ``(best, train, valid, all_nets)`` where ``train``/``valid`` are the
    (y, X) arrays after lag alignment.
    """
    grid = list(grid) if grid is not None else architecture_grid(base)
    train, valid = chronological_split(y, X, base.lag)
    nets = []
    for spec in grid:
        kw = {f: getattr(spec, f) for f in spec.__dataclass_fields__}
        kw["lag"] = 0  # already aligned
        nets.append(fit_network(train[0], train[1], NetworkSpec(**kw), valid=valid))
    best = min(nets, key=lambda n: (n.valid_rmse, sum(n.spec.hidden)))
    return best, train, valid, nets


# -- aggregation --------------------------------------------------------------


def aggregate_sensitivities(grads, aggregation: str = "mean") -> np.ndarray:
    G = np.atleast_2d(np.asarray(grads, float))
    if G.shape[0] < 1:
        raise ValueError("need at least one gradient row")
    if aggregation == "mean":
        return G.mean(axis=0)
    if aggregation == "median":
        return np.median(G, axis=0)
    raise ValueError(f"unknown aggregation {aggregation!r}")


@dataclass(frozen=True)
class SensitivityMatrix:
    assets: tuple
    drivers: tuple
    values: np.ndarray
    aggregation: str = "mean"
    source: str = "linear"
    window: WindowSpec | None = None

    def __post_init__(self):
        v = np.array(self.values, float)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "drivers", tuple(self.drivers))
        if v.shape != (len(self.assets), len(self.drivers)):
            raise ShapeMismatch(f"sensitivity values {v.shape} vs {len(self.assets)} x {len(self.drivers)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sensitivities must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def subset(self, assets: Sequence[str]) -> "SensitivityMatrix":
        idx = [self.assets.index(a) for a in assets]
        return SensitivityMatrix(tuple(assets), self.drivers, self.values[idx],
                                 self.aggregation, self.source, self.window)


@dataclass(frozen=True)
class FitReport:
    asset: str
    model: str
    rmse: float
    spec: str
    valid_rmse: float | None = None


def estimate_sensitivities(assets: ReturnPanel, drivers: ReturnPanel, window: WindowSpec,
                           model: str = "linear", aggregation: str = "mean", scope: str = "in",
                           base_spec: NetworkSpec = NetworkSpec()):
    """Fit one model per asset over ``window`` and aggregate its input gradients.

    ``scope`` chooses the rows where network gradients are evaluated: the
    training rows (``in``) or the chronological hold-out (``out``).
    Returns ``(SensitivityMatrix, [FitReport, ...])``.
    """
    if scope not in ("in", "out"):
        raise ValueError("scope must be 'in' or 'out'")
    Xw, Yw = lagged_pair(drivers, assets, window)
    rows, reports = [], []
    for j, name in enumerate(assets.names):
        y = Yw[:, j]
        if model == "linear":
            lm = fit_linear(y, Xw, 0)
            rows.append(lm.betas)
            reports.append(FitReport(name, "linear", lm.rmse, f"ols[lag={window.lag}]"))
        elif model == "network":
            best, train, valid, _ = fit_network_grid(y, Xw, NetworkSpec(**{
                **{f: getattr(base_spec, f) for f in base_spec.__dataclass_fields__}, "lag": 0}))
            pts = train[1] if scope == "in" else valid[1]
            rows.append(aggregate_sensitivities(best.input_gradients(pts), aggregation))
            reports.append(FitReport(name, "network", best.train_rmse, best.spec.label(), best.valid_rmse))
        else:
            raise ValueError(f"unknown model {model!r}")
    S = SensitivityMatrix(assets.names, drivers.names, np.vstack(rows), aggregation, model, window)
    return S, reports
