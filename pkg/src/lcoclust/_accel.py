"""Backend selection for the hot kernels.

Numba is used when it imports and ``LCO_DISABLE_NUMBA`` is unset (or ``0``).
Set ``LCO_DISABLE_NUMBA=1`` to force the pure-numpy path; the flag is read
once, at import time.
"""

from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("LCO_DISABLE_NUMBA", "0").strip().lower() in _FALSY

NUMBA_KWARGS = {"cache": True, "nogil": True}


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it unchanged.

    The undecorated function stays reachable as ``.py_func`` in both cases so
    tests can compare the compiled and interpreted versions.
    """
    if not HAVE_NUMBA:
        func.py_func = func
        return func
    from numba import njit as _njit

    return _njit(**NUMBA_KWARGS)(func)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
