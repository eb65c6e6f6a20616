"""Backend selection for the compiled kernels.

Set ``STIFFKIT_DISABLE_NUMBA=1`` to force the pure-numpy path. The flag is
read once at import time.
"""

import os

_FALSY = ("", "0", "false", "no", "off")

USE_NUMBA = os.environ.get("STIFFKIT_DISABLE_NUMBA", "0").strip().lower() in _FALSY

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a hard dependency
        USE_NUMBA = False


def njit(fn):
    """Compile ``fn`` with numba when enabled, otherwise return it unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
