"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from the FCMBENCH_NUMBA
environment variable: "1"/"on" forces numba (import error if missing),
"0"/"off" forces the numpy fallback, anything else auto-detects.
`benchmarks/bench_kernels.py` compares the two paths.

Every public kernel is deterministic within a backend; results across
backends agree exactly for integer kernels and to float rounding for
the rest.
"""

import os

_flag = os.environ.get("FCMBENCH_NUMBA", "auto").strip().lower()

if _flag in ("0", "off", "false", "no"):
    NUMBA_ENABLED = False
elif _flag in ("1", "on", "true", "yes"):
    from numba import njit  # noqa: F401  (raises if numba missing)

    NUMBA_ENABLED = True
else:
    try:
        from numba import njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def jit(func):
    """Apply @njit(cache=True) on the numba backend, no-op otherwise."""
    if not NUMBA_ENABLED:
        return func
    from numba import njit

    return njit(cache=True)(func)


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
