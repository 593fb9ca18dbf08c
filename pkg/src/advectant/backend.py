"""Kernel backend selection.

Two implementations of the hot kernels exist: numba ``@njit`` loops and a
pure-numpy fallback.  ``ADVECTANT_BACKEND=numpy`` forces the fallback;
anything else (or unset) prefers numba when it imports.  ``ADVECTANT_THREADS``
caps numba's thread pool.
"""

import os
import warnings

_ENV_BACKEND = "ADVECTANT_BACKEND"
_ENV_THREADS = "ADVECTANT_THREADS"


def _resolve_backend() -> str:
    requested = os.environ.get(_ENV_BACKEND, "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested not in ("", "numba"):
        raise ValueError(
            f"{_ENV_BACKEND} must be 'numba' or 'numpy', got {requested!r}"
        )
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            warnings.warn("numba requested but not importable; using numpy")
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()


def _apply_thread_cap() -> None:
    cap = os.environ.get(_ENV_THREADS, "").strip()
    if not cap or BACKEND != "numba":
        return
    import numba

    n = max(1, int(cap))
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


_apply_thread_cap()


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return BACKEND
