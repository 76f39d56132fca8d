"""Optional numba acceleration with a pure-numpy fallback.

Hot numeric kernels are decorated with ``njit``.  Set the environment
variable ``HBE_NO_NUMBA=1`` (or any nonempty value) before import to
force the plain-python/numpy path; the same happens automatically when
numba is not installed.  ``USING_NUMBA`` reports which path is active.
"""

from __future__ import annotations

import os


def _nop_njit(*aargs, **kkwargs):
    if len(aargs) == 1 and callable(aargs[0]) and not kkwargs:
        return aargs[0]

    def decorator(func):
        return func

    return decorator


if os.environ.get("HBE_NO_NUMBA"):
    USING_NUMBA = False
    njit = _nop_njit
    prange = range
else:
    try:
        from numba import njit, prange

        USING_NUMBA = True
    except ImportError:
        USING_NUMBA = False
        njit = _nop_njit
        prange = range
