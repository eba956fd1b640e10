"""Optional numba acceleration.

Set ``LDX_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
implementation. The flag is read once at import time.
"""

import os

_disabled = os.environ.get("LDX_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(fn):
    """Compile ``fn`` with ``numba.njit(cache=True)`` when acceleration is on."""
    if HAVE_NUMBA:
        return _njit(cache=True)(fn)
    return fn


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
