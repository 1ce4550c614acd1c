"""Backend selection for the scatter kernels.

Set ``IDOVFI_DISABLE_NUMBA=1`` to force the pure-numpy path (useful for
debugging and for machines where numba is unavailable).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

_FLAG = "IDOVFI_DISABLE_NUMBA"

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes")

njit_kwargs = {"nogil": True, "cache": True}  # compiled kernels persist in __pycache__


def njit(fn):
    """``numba.njit`` when available, otherwise return ``fn`` unchanged."""
    if not NUMBA_AVAILABLE:
        return fn
    return numba.njit(**njit_kwargs)(fn)
