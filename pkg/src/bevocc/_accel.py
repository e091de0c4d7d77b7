"""Backend selection for the hot kernels.

Every kernel in :mod:`bevocc.kernels` exists twice: a numba ``@njit`` loop and a
vectorised numpy fallback.  The numba path is used when numba imports and the
environment does not set ``BEVOCC_DISABLE_NUMBA=1``.  ``set_backend`` switches
at runtime, which the benchmarks use to time both paths in one process.
"""

import os

_DISABLED = os.environ.get("BEVOCC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("disabled by BEVOCC_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

_backend = "numba" if HAVE_NUMBA else "numpy"


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return it untouched."""
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def get_backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable or disabled")
    _backend = name


class use_backend:
    """Context manager that temporarily selects a backend."""

    def __init__(self, name):
        self.name = name
        self._prev = None

    def __enter__(self):
        self._prev = get_backend()
        set_backend(self.name)
        return self

    def __exit__(self, *exc):
        set_backend(self._prev)
        return False
