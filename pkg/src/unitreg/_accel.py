"""Backend selection for the compiled kernels.

Set ``UNITREG_DISABLE_NUMBA=1`` to force the pure-numpy implementations
(useful for debugging and for platforms without numba).
"""
import os

_DISABLED = os.environ.get("UNITREG_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False


def backend():
    return "numba" if HAVE_NUMBA else "numpy"


def njit(func):
    """``numba.njit(cache=True)`` when numba is active, otherwise ``None``."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, fastmath=False)(func)
