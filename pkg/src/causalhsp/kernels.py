"""Hot numerical kernels with a numba path and a vectorized numpy path.

Both implementations are always importable as ``numpy_impl`` and (when numba
is present) ``numba_impl``; the module-level names dispatch to the active
backend. They agree to floating-point round-off, and the Euler recursions
agree bit for bit because they perform identical scalar operations.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from ._accel import NUMBA_AVAILABLE, njit

# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _pairwise_euclidean_np(X):
    diff = X[:, None, :] - X[None, :, :]
    D = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(D, 0.0)
    return D


def _mst_edges_np(D):
    n = D.shape[0]
    a = np.empty(n - 1, dtype=np.int64)
    b = np.empty(n - 1, dtype=np.int64)
    h = np.empty(n - 1)
    if n < 2:
        return a, b, h
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    dist = D[0].astype(float).copy()
    parent = np.zeros(n, dtype=np.int64)
    for e in range(n - 1):
        j = int(np.argmin(np.where(in_tree, np.inf, dist)))
        a[e], b[e], h[e] = parent[j], j, dist[j]
        in_tree[j] = True
        upd = (D[j] < dist) & ~in_tree
        dist[upd] = D[j][upd]
        parent[upd] = j
    return a, b, h


def _project_capped_simplex_np(v, lo, hi, total=1.0):
    bps = np.sort(np.concatenate([v - hi, v - lo]))
    f = np.clip(v[None, :] - bps[:, None], lo, hi).sum(axis=1)
    # f is non-increasing in tau; locate the segment that brackets `total`
    k = int(np.searchsorted(-f, -total, side="left"))
    if k == 0:
        tau = bps[0]
    elif k >= bps.size:
        tau = bps[-1]
    else:
        f0, f1 = f[k - 1], f[k]
        tau = bps[k - 1] if f0 == f1 else bps[k - 1] + (f0 - total) * (bps[k] - bps[k - 1]) / (f0 - f1)
    return np.clip(v - tau, lo, hi)


def _pgd_qp_np(M, c, lo, hi, w0, step, max_iter, tol):
    proj = _project_capped_simplex_np
    w = proj(w0, lo, hi)
    y = w.copy()
    theta = 1.0
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        w_new = proj(y - step * (2.0 * M @ y - c), lo, hi)
        gw = 2.0 * M @ w_new - c
        res = np.max(np.abs(w_new - proj(w_new - step * gw, lo, hi))) / step
        if res < tol:
            w = w_new
            break
        if np.dot(y - w_new, w_new - w) > 0.0:
            theta = 1.0
        theta_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        y = w_new + ((theta - 1.0) / theta_next) * (w_new - w)
        w, theta = w_new, theta_next
    return w, it, res


def _euler_ou_np(s0, kappa, theta, sigma, dt, Z):
    n_paths, T = Z.shape
    out = np.empty((n_paths, T + 1))
    out[:, 0] = s0
    sq = np.sqrt(dt)
    for k in range(T):
        s = out[:, k]
        out[:, k + 1] = s + kappa * (theta[k] - s) * dt + sigma * sq * Z[:, k]
    return out


def _euler_local_vol_np(s0, kappa, alpha, beta, dt, Z):
    n_paths, T = Z.shape
    out = np.empty((n_paths, T + 1))
    out[:, 0] = s0
    sq = np.sqrt(dt)
    for k in range(T):
        s = out[:, k]
        out[:, k + 1] = s * (1.0 - kappa * dt) + s * (alpha + beta * (k * dt)) * sq * Z[:, k]
    return out


numpy_impl = SimpleNamespace(
    pairwise_euclidean=_pairwise_euclidean_np,
    mst_edges=_mst_edges_np,
    project_capped_simplex=_project_capped_simplex_np,
    pgd_qp=_pgd_qp_np,
    euler_ou=_euler_ou_np,
    euler_local_vol=_euler_local_vol_np,
)

# ---------------------------------------------------------------------------
# loop implementations, compiled by numba
# ---------------------------------------------------------------------------


def _pairwise_euclidean_loop(X):
    n, m = X.shape
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(m):
                d = X[i, k] - X[j, k]
                acc += d * d
            D[i, j] = D[j, i] = np.sqrt(acc)
    return D


def _mst_edges_loop(D):
    n = D.shape[0]
    a = np.empty(max(n - 1, 0), dtype=np.int64)
    b = np.empty(max(n - 1, 0), dtype=np.int64)
    h = np.empty(max(n - 1, 0))
    if n < 2:
        return a, b, h
    in_tree = np.zeros(n, dtype=np.bool_)
    in_tree[0] = True
    dist = np.empty(n)
    parent = np.zeros(n, dtype=np.int64)
    for i in range(n):
        dist[i] = D[0, i]
    for e in range(n - 1):
        j = -1
        best = np.inf
        for i in range(n):
            if not in_tree[i] and (j < 0 or dist[i] < best):
                best = dist[i]
                j = i
        a[e] = parent[j]
        b[e] = j
        h[e] = dist[j]
        in_tree[j] = True
        for i in range(n):
            if not in_tree[i] and D[j, i] < dist[i]:
                dist[i] = D[j, i]
                parent[i] = j
    return a, b, h


def _project_capped_simplex_loop(v, lo, hi, total=1.0):
    n = v.size
    bps = np.empty(2 * n)
    for i in range(n):
        bps[i] = v[i] - hi[i]
        bps[n + i] = v[i] - lo[i]
    bps.sort()
    prev_t = bps[0]
    prev_f = 0.0
    for i in range(n):
        prev_f += min(max(v[i] - prev_t, lo[i]), hi[i])
    tau = bps[0]
    if prev_f > total:
        tau = bps[-1]
        for k in range(1, 2 * n):
            t = bps[k]
            f = 0.0
            for i in range(n):
                f += min(max(v[i] - t, lo[i]), hi[i])
            if f <= total:
                if prev_f == f:
                    tau = prev_t
                else:
                    tau = prev_t + (prev_f - total) * (t - prev_t) / (prev_f - f)
                break
            prev_t = t
            prev_f = f
    out = np.empty(n)
    for i in range(n):
        out[i] = min(max(v[i] - tau, lo[i]), hi[i])
    return out


def _pgd_qp_loop(M, c, lo, hi, w0, step, max_iter, tol):
    proj = _project_capped_simplex_jit
    w = proj(w0, lo, hi, 1.0)
    y = w.copy()
    theta = 1.0
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        w_new = proj(y - step * (2.0 * (M @ y) - c), lo, hi, 1.0)
        gw = 2.0 * (M @ w_new) - c
        res = np.max(np.abs(w_new - proj(w_new - step * gw, lo, hi, 1.0))) / step
        if res < tol:
            w = w_new
            break
        if np.dot(y - w_new, w_new - w) > 0.0:
            theta = 1.0
        theta_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        y = w_new + ((theta - 1.0) / theta_next) * (w_new - w)
        w = w_new
        theta = theta_next
    return w, it, res


def _euler_ou_loop(s0, kappa, theta, sigma, dt, Z):
    n_paths, T = Z.shape
    out = np.empty((n_paths, T + 1))
    sq = np.sqrt(dt)
    for p in range(n_paths):
        out[p, 0] = s0
        for k in range(T):
            s = out[p, k]
            out[p, k + 1] = s + kappa * (theta[k] - s) * dt + sigma * sq * Z[p, k]
    return out


def _euler_local_vol_loop(s0, kappa, alpha, beta, dt, Z):
    n_paths, T = Z.shape
    out = np.empty((n_paths, T + 1))
    sq = np.sqrt(dt)
    for p in range(n_paths):
        out[p, 0] = s0
        for k in range(T):
            s = out[p, k]
            out[p, k + 1] = s * (1.0 - kappa * dt) + s * (alpha + beta * (k * dt)) * sq * Z[p, k]
    return out


if NUMBA_AVAILABLE:
    _project_capped_simplex_jit = njit(_project_capped_simplex_loop)
    numba_impl = SimpleNamespace(
        pairwise_euclidean=njit(_pairwise_euclidean_loop),
        mst_edges=njit(_mst_edges_loop),
        project_capped_simplex=_project_capped_simplex_jit,
        pgd_qp=njit(_pgd_qp_loop),
        euler_ou=njit(_euler_ou_loop),
        euler_local_vol=njit(_euler_local_vol_loop),
    )
    _active = numba_impl
else:
    _project_capped_simplex_jit = _project_capped_simplex_loop
    numba_impl = None
    _active = numpy_impl


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pairwise_euclidean(X):
    """Euclidean distances between the rows of ``X`` (n x m) as an n x n array."""
    return _active.pairwise_euclidean(_f64(np.atleast_2d(X)))


def mst_edges(D):
    """Prim minimum spanning tree of a dense distance matrix.

    Returns ``(a, b, height)`` arrays of length n - 1 in discovery order.
    Single-linkage merge heights are exactly the sorted MST edge weights.
    """
    return _active.mst_edges(_f64(D))


def project_capped_simplex(v, lo, hi, total=1.0):
    """Euclidean projection onto ``{x : sum(x) = total, lo <= x <= hi}``.

    Exact: the dual variable is found by scanning the 2n breakpoints of the
    piecewise-linear map ``tau -> sum(clip(v - tau, lo, hi))``.
    """
    return _active.project_capped_simplex(_f64(v), _f64(lo), _f64(hi), float(total))


def pgd_qp(M, c, lo, hi, w0, step, max_iter=100_000, tol=1e-6):
    """Accelerated projected gradient for ``min w'Mw - c'w`` on the capped simplex.

    Returns ``(w, iterations, residual)`` where ``residual`` is the infinity norm
    of the gradient mapping ``(w - P(w - step*grad)) / step``.
    """
    return _active.pgd_qp(_f64(M), _f64(c), _f64(lo), _f64(hi), _f64(w0),
                          float(step), int(max_iter), float(tol))


def euler_ou(s0, kappa, theta, sigma, dt, Z):
    """Euler-Maruyama paths of dS = kappa (theta_t - S) dt + sigma dW.

    ``theta`` holds one level per step; ``Z`` is (n_paths, T). Output is
    (n_paths, T + 1) with ``s0`` in column 0.
    """
    return _active.euler_ou(float(s0), float(kappa), _f64(theta), float(sigma), float(dt), _f64(Z))


def euler_local_vol(s0, kappa, alpha, beta, dt, Z):
    """S_{k+1} = S_k (1 - kappa dt) + S_k (alpha + beta t_k) sqrt(dt) Z_k."""
    return _active.euler_local_vol(float(s0), float(kappa), float(alpha), float(beta), float(dt), _f64(Z))
