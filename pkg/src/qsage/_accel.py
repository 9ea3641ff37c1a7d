"""Selection between numba-compiled kernels and their pure-numpy twins.

Set ``QSAGE_DISABLE_NUMBA=1`` before import to force the numpy path. The
choice is made once, at import time; both implementations stay importable
so they can be compared side by side.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("QSAGE_DISABLE_NUMBA", "").strip().lower() in _FALSY


try:
    from numba import njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

USE_NUMBA = NUMBA_AVAILABLE and _numba_requested()


def pick(numba_impl, numpy_impl):
    """Return the kernel matching the active backend."""
    return numba_impl if USE_NUMBA else numpy_impl
