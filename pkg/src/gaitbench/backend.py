"""Kernel backend selection: numba-jitted fast path or plain numpy fallback.

Set GAITBENCH_NUMBA=0 to force the interpreted numpy path (useful for
debugging and for benchmarking the jit speedup). The backend is fixed at
import time; it is recorded in run manifests so results stay attributable.
"""

import os

_FALSE_VALUES = ("0", "false", "off", "no")


def _numba_requested() -> bool:
    return os.environ.get("GAITBENCH_NUMBA", "1").strip().lower() not in _FALSE_VALUES


NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_ENABLED = False


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def jit_kernel(fn):
    """Decorate a hot kernel: numba nopython-compile it, or leave it as-is.

    Kernels must be written in the numba-supported numpy subset so that both
    paths execute the identical source.
    """
    if NUMBA_ENABLED:
        return _njit(cache=True, nogil=True)(fn)
    return fn


def py_func(kernel):
    """Return the undecorated python function behind a kernel (for benchmarks)."""
    return getattr(kernel, "py_func", kernel)
