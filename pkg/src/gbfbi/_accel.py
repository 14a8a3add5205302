"""Optional numba acceleration.

Set ``GBFBI_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
"""
import os

try:
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("GBFBI_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")


def optional_njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity otherwise."""
    def decorator(func):
        if USE_NUMBA:
            return _njit(*args, **kwargs)(func)
        return func
    return decorator


def njit_always(*args, **kwargs):
    """Compile when numba is importable, regardless of the env flag (benchmarks)."""
    def decorator(func):
        if HAVE_NUMBA:
            return _njit(*args, **kwargs)(func)
        return func
    return decorator
