"""Synthetic markets with planted common drivers.

Assets split into clusters. Every asset loads on a market driver and on its
cluster's driver; the remaining candidates are pure noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market_data import ReturnPanel
from .rng import stream_key


@dataclass(frozen=True)
class SyntheticMarket:
    assets: ReturnPanel
    drivers: ReturnPanel
    clusters: tuple            # tuple of tuples of asset names
    loadings: np.ndarray       # n_assets x n_drivers


def business_days(n: int, start: str = "2015-01-01") -> np.ndarray:
    return np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")


def two_cluster_market(seed: int = 0, n_assets: int = 14, n_rows: int = 756, n_noise: int = 5,
                       n_clusters: int = 2, driver_vol: float = 0.01, noise_vol: float = 0.006,
                       market_beta: float = 0.6, cluster_beta: float = 1.0) -> SyntheticMarket:
    gen = np.random.Generator(np.random.Philox(key=stream_key(seed, "synth")))
    names_d = ["MKT"] + [f"CL{c + 1}" for c in range(n_clusters)] + [f"NZ{k + 1}" for k in range(n_noise)]
    D = gen.normal(0.0, driver_vol, size=(n_rows, len(names_d)))
    D[:, 0] += 0.0002
    groups = np.array_split(np.arange(n_assets), n_clusters)
    B = np.zeros((n_assets, len(names_d)))
    for c, idx in enumerate(groups):
        B[idx, 0] = market_beta * gen.uniform(0.7, 1.3, size=idx.size)
        B[idx, 1 + c] = cluster_beta * gen.uniform(0.7, 1.3, size=idx.size)
    eps = gen.normal(0.0, noise_vol, size=(n_rows, n_assets)) * gen.uniform(0.6, 1.4, size=n_assets)
    R = D @ B.T + eps + 0.0001
    names_a = [f"A{i + 1:02d}" for i in range(n_assets)]
    dates = business_days(n_rows)
    clusters = tuple(tuple(names_a[i] for i in idx) for idx in groups)
    return SyntheticMarket(ReturnPanel(dates, names_a, R), ReturnPanel(dates, names_d, D), clusters, B)


def groups_clusters(order_names, clusters) -> bool:
    """True when each cluster occupies a contiguous block of the leaf order."""
    pos = {a: k for k, a in enumerate(order_names)}
    for members in clusters:
        p = sorted(pos[a] for a in members)
        if p[-1] - p[0] + 1 != len(p):
            return False
    return True
