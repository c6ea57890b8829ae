"""Selection between numba-compiled kernels and the pure-numpy fallback.

Set ``VPCCA_DISABLE_NUMBA=1`` before import to force the numpy path.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("VPCCA_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(func):
    """Compile ``func`` in nopython mode when numba is available, else return it unchanged."""
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def set_num_threads(n: int) -> None:
    """Limit numba and BLAS thread pools to ``n`` threads."""
    if numba is not None:
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(limits=n)
