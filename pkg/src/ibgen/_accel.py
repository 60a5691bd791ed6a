"""Numba switch.

Set ``IBGEN_DISABLE_NUMBA=1`` to force the pure-numpy kernels (useful for
debugging, coverage, or platforms without llvmlite).
"""

import os

_DISABLED = os.environ.get("IBGEN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by IBGEN_DISABLE_NUMBA")
    import numba

    NUMBA_AVAILABLE = True
except ImportError:
    numba = None
    NUMBA_AVAILABLE = False

njit_opts = {"cache": True, "error_model": "numpy", "fastmath": False}


def njit(fn):
    """Compile with numba when available, otherwise return ``fn`` unchanged."""
    if NUMBA_AVAILABLE:
        return numba.njit(**njit_opts)(fn)
    return fn


def backend() -> str:
    return "numba" if NUMBA_AVAILABLE else "numpy"
