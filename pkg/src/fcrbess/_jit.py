"""numba switch.

Kernels are decorated with :func:`njit` from this module.  Setting the
environment variable ``FCRBESS_NO_NUMBA=1`` (or running without numba
installed) turns the decorator into a no-op, so the same source runs as
plain Python over numpy arrays.  The flag is read once at import time.
"""

import os

_FLAG = os.environ.get("FCRBESS_NO_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

USE_NUMBA = _numba is not None


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True`` by default, or identity when disabled."""
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap


def backend():
    return "numba" if USE_NUMBA else "python"
