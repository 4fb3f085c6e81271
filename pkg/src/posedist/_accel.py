"""Numba switch.

Set ``POSEDIST_DISABLE_NUMBA=1`` to force the pure numpy code paths. Numba is
also bypassed silently when it cannot be imported.
"""

import os

_FLAG = os.environ.get("POSEDIST_DISABLE_NUMBA", "").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit_opts():
    return dict(cache=True, nogil=True, fastmath=False, error_model="numpy")


def njit(fn):
    """Compile ``fn`` with numba when available, else return it untouched."""
    if not HAVE_NUMBA:
        return fn
    return _numba.njit(**njit_opts())(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
