"""Optional numba acceleration for the hot stepping loops.

Kernels are written once in a numba-compatible subset of Python.  With
``TSLAB_NUMBA=0`` (or when numba is not importable) they run as plain Python
over numpy arrays, which is slow but has identical semantics.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _requested() -> bool:
    return os.environ.get("TSLAB_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


ENABLED = numba is not None and _requested()
BACKEND = "numba" if ENABLED else "python"


def jit(fn):
    """Compile ``fn`` with ``numba.njit`` when acceleration is enabled."""
    if ENABLED:
        return numba.njit(cache=True)(fn)
    return fn

