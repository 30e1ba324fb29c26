"""Distances in sensitivity space, PSD repair, single linkage and leaf ordering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import EigenFailure, ShapeMismatch
from .sensitivity_models import SensitivityMatrix

SYM_TOL = 1e-12


@dataclass(frozen=True)
class DistanceMatrix:
    """Named square matrix.

    ``kind='distance'`` enforces a hollow, symmetric, non-negative matrix.
    Repaired matrices and kernel similarities carry other kinds and are only
    required to be symmetric.
    """

    names: tuple
    values: np.ndarray
    metric: str = "euclidean"
    kind: str = "distance"

    def __post_init__(self):
        v = np.array(self.values, float)
        names = tuple(self.names)
        if v.shape != (len(names), len(names)):
            raise ShapeMismatch(f"matrix shape {v.shape} does not match {len(names)} names")
        scale = max(1.0, float(np.abs(v).max(initial=0.0)))
        if np.abs(v - v.T).max(initial=0.0) > SYM_TOL * scale:
            raise ValueError("matrix is not symmetric")
        if self.kind == "distance":
            if np.any(np.diag(v) != 0.0):
                raise ValueError("distance matrix must have a zero diagonal")
            if np.any(v < 0.0):
                raise ValueError("distances must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return len(self.names)

    def permuted(self, order: Sequence[int]) -> "DistanceMatrix":
        idx = np.asarray(order)
        return DistanceMatrix([self.names[i] for i in idx], self.values[np.ix_(idx, idx)],
                              self.metric, self.kind)


@dataclass(frozen=True)
class LinkageTree:
    """Agglomerative merges in scipy layout plus the quasi-diagonal leaf order.

    Row ``i`` of ``merges`` is (left id, right id, height, size); ids below n
    are leaves, id ``n + i`` is the cluster formed at row ``i``.
    """

    names: tuple
    merges: np.ndarray
    leaf_order: tuple

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    def ordered_names(self) -> tuple:
        return tuple(self.names[i] for i in self.leaf_order)

    def merge_sets(self) -> list[tuple[frozenset, float]]:
        """Each merge as (set of leaf indices formed, height)."""
        n = len(self.names)
        members = {i: frozenset([i]) for i in range(n)}
        out = []
        for i, (a, b, h, _) in enumerate(self.merges):
            members[n + i] = members[int(a)] | members[int(b)]
            out.append((members[n + i], float(h)))
        return out


def sensitivity_distance(S: SensitivityMatrix | np.ndarray, names: Sequence[str] | None = None) -> DistanceMatrix:
    """Euclidean distance between the sensitivity rows of each pair of assets."""
    if isinstance(S, SensitivityMatrix):
        values, names = S.values, S.assets
    else:
        values = np.atleast_2d(np.asarray(S, float))
        names = names if names is not None else [f"a{i}" for i in range(values.shape[0])]
    if not np.all(np.isfinite(values)):
        raise ValueError("sensitivities must be finite")
    return DistanceMatrix(names, kernels.pairwise_euclidean(values), "euclidean")


def nearest_psd(D: DistanceMatrix | np.ndarray, tol: float = 1e-10):
    """Project a symmetric matrix onto the PSD cone by clipping negative eigenvalues.

    An input whose smallest eigenvalue is at least ``-tol`` is returned
    unchanged. The repaired matrix keeps whatever diagonal the projection
    produces; it is meant for clustering only.
    """
    named = isinstance(D, DistanceMatrix)
    A = np.asarray(D.values if named else D, float)
    if np.abs(A - A.T).max(initial=0.0) > SYM_TOL * max(1.0, np.abs(A).max(initial=0.0)):
        raise ValueError("nearest_psd requires a symmetric matrix")
    A = 0.5 * (A + A.T)
    try:
        lam, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(f"eigendecomposition failed: {exc}") from exc
    if lam.size == 0 or lam[0] >= -tol:
        out = A
    else:
        out = (V * np.clip(lam, 0.0, None)) @ V.T
        out = 0.5 * (out + out.T)
        low = np.linalg.eigvalsh(out)[0]
        if low < -tol:
            raise EigenFailure(f"repaired matrix still has eigenvalue {low:.3e}")
    if named:
        return DistanceMatrix(D.names, out, D.metric, "repaired")
    return out


def column_distance(D: DistanceMatrix | np.ndarray) -> np.ndarray:
    """Distance between columns of ``D``: ||D[:, x] - D[:, y]||."""
    A = np.asarray(D.values if isinstance(D, DistanceMatrix) else D, float)
    return kernels.pairwise_euclidean(A.T)


def single_linkage(D: DistanceMatrix | np.ndarray, names: Sequence[str] | None = None) -> LinkageTree:
    """Single-linkage agglomeration of the entries of ``D`` taken as distances.

    Merge heights come from the minimum spanning tree (the sorted MST edges are
    exactly the single-linkage heights). Children are ordered so the one
    holding the smaller original index goes left; the leaf order is the
    left-first depth-first traversal.
    """
    if isinstance(D, DistanceMatrix):
        A, names = np.asarray(D.values), D.names
    else:
        A = np.asarray(D, float)
        names = tuple(names) if names is not None else tuple(f"a{i}" for i in range(A.shape[0]))
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if n == 1:
        return LinkageTree(tuple(names), np.zeros((0, 4)), (0,))
    a, b, h = kernels.mst_edges(A)
    order = np.argsort(h, kind="stable")
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    cluster_of = list(range(n))   # union-find root -> cluster id
    lowest = list(range(2 * n - 1))
    size = [1] * (2 * n - 1)
    merges = np.zeros((n - 1, 4))
    for i, e in enumerate(order):
        ra, rb = find(int(a[e])), find(int(b[e]))
        ca, cb = cluster_of[ra], cluster_of[rb]
        if lowest[cb] < lowest[ca]:
            ca, cb = cb, ca
        new = n + i
        lowest[new] = lowest[ca]
        size[new] = size[ca] + size[cb]
        merges[i] = (ca, cb, h[e], size[new])
        parent[rb] = ra
        cluster_of[ra] = new
    leaves, stack = [], [2 * n - 2]
    while stack:
        c = stack.pop()
        if c < n:
            leaves.append(c)
        else:
            left, right = (int(x) for x in merges[c - n, :2])
            stack.extend((right, left))
    return LinkageTree(tuple(names), merges, tuple(leaves))


def aggregate_trajectory(D_list: Sequence[DistanceMatrix], mode: str = "mean") -> DistanceMatrix:
    """Elementwise mean, or cumulative (= T x mean) of per-step matrices.

    The cumulative form is materialized as ``T * mean`` so the two are exactly
    proportional and give identical single-linkage trees.
    """
    if not D_list:
        raise ValueError("empty trajectory")
    first = D_list[0]
    for D in D_list[1:]:
        if D.names != first.names or D.values.shape != first.values.shape:
            raise ShapeMismatch("trajectory matrices differ in names or shape")
    T = len(D_list)
    mean = np.sum([np.asarray(D.values) for D in D_list], axis=0) / T if T > 1 else np.array(first.values)
    if mode == "mean":
        out = mean
    elif mode == "cumulative":
        out = T * mean
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return DistanceMatrix(first.names, out, first.metric, first.kind)


def kernelize(D: DistanceMatrix, sigma: float) -> DistanceMatrix:
    """Gaussian kernel exp(-d^2 / (2 sigma^2)) of a distance matrix."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    K = np.exp(-np.square(np.asarray(D.values)) / (2.0 * sigma * sigma))
    return DistanceMatrix(D.names, K, f"kernel({sigma:g})", "similarity")
