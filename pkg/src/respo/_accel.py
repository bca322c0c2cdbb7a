"""Optional numba acceleration.

Set ``RESPO_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
Jitted kernels keep the original function on ``.py_func`` either way.
"""
import os

NUMBA_DISABLED = os.environ.get("RESPO_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

HAVE_NUMBA = _numba is not None and not NUMBA_DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, else a pass-through decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)

    def wrap(fn):
        fn.py_func = fn
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return wrap(args[0])
    return wrap


def backend() -> str:
    return "numba" if HAVE_NUMBA else "python"
