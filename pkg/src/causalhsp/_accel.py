"""Optional numba acceleration.

Set ``CAUSALHSP_NO_NUMBA=1`` to force the pure-numpy kernels even when numba
is installed. The flag is read once at import time.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("CAUSALHSP_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by CAUSALHSP_NO_NUMBA")
    import numba as _numba
except ImportError:
    _numba = None

NUMBA_AVAILABLE = _numba is not None


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when available, else a no-op decorator."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def backend() -> str:
    return "numba" if NUMBA_AVAILABLE else "numpy"
