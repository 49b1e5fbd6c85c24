"""Backend switch for the hot kernels.

Kernels are compiled with numba when it is importable, unless the
environment variable ``KACZKO_DISABLE_NUMBA`` is set to a truthy value, in
which case the same source runs as plain Python over numpy arrays.
"""
import os

ENV_FLAG = "KACZKO_DISABLE_NUMBA"


def _flag_set(value):
    return value.strip().lower() in ("1", "true", "yes", "on")


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and not _flag_set(os.environ.get(ENV_FLAG, ""))
BACKEND = "numba" if NUMBA_ENABLED else "numpy"


def jit(fn):
    """``numba.njit`` when the numba backend is active, identity otherwise."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn
