"""Optional numba acceleration.

Set ``DPSVOC_DISABLE_NUMBA=1`` to force the pure-numpy kernels.
"""
import os

ENV_FLAG = "DPSVOC_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_disabled_by_env():
    return os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True, fastmath=False)(func)
    return func
