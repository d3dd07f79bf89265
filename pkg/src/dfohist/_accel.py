"""Numba switch.

Set ``DFOHIST_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels. The flag is read once at import time.
"""
import os

_FLAG = os.environ.get("DFOHIST_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if DISABLED:
        raise ImportError
    import numba as nb

    HAS_NUMBA = True
except ImportError:
    nb = None
    HAS_NUMBA = False

NJIT_KWARGS = {"nogil": True, "cache": True, "fastmath": False}


def njit(func):
    """``numba.njit`` when enabled, identity otherwise."""
    if HAS_NUMBA:
        return nb.njit(**NJIT_KWARGS)(func)
    return func
