"""Counter-based random streams.

Normals come from Philox4x64-10 raw 64-bit words passed through Box-Muller.
The raw words are fully determined by the 128-bit key, so a stream is
reproducible across platforms and numpy versions. Substreams are addressed
by ``(seed, *labels)`` and never overlap for distinct labels.
"""

from __future__ import annotations

import hashlib

import numpy as np

_TWO_M53 = 2.0 ** -53
_MASK64 = (1 << 64) - 1


def stream_key(seed: int, *labels) -> int:
    """128-bit Philox key: the seed in the high word, a label digest in the low."""
    tag = "/".join(str(x) for x in labels).encode()
    low = int.from_bytes(hashlib.blake2b(tag, digest_size=8).digest(), "little")
    return ((int(seed) & _MASK64) << 64) | low


def raw_words(seed: int, n: int, *labels) -> np.ndarray:
    bg = np.random.Philox(key=stream_key(seed, *labels))
    return bg.random_raw(n)


def uniforms(seed: int, n: int, *labels) -> np.ndarray:
    """Uniforms on (0, 1]: the top 53 bits of each word, shifted off zero."""
    return ((raw_words(seed, n, *labels) >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53


def normals(seed: int, n: int, *labels) -> np.ndarray:
    """``n`` standard normals by the Box-Muller transform (both outputs used)."""
    pairs = (n + 1) // 2
    u = uniforms(seed, 2 * pairs, *labels)
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    phi = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(phi)
    z[1::2] = r * np.sin(phi)
    return z[:n]


def normal_matrix(seed: int, n_paths: int, T: int, *labels) -> np.ndarray:
    """(n_paths, T) normals with one independent substream per path."""
    out = np.empty((n_paths, T))
    for p in range(n_paths):
        out[p] = normals(seed, T, *labels, p)
    return out
