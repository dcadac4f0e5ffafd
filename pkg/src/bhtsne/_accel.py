"""Backend selection for the hot kernels.

Every loop-heavy kernel in the package has two implementations: a numba
``@njit`` version and a pure-numpy version.  The numba path is the default;
setting ``BHTSNE_DISABLE_JIT=1`` in the environment (or calling
:func:`set_backend` with ``"numpy"``) routes every dispatch through numpy.
"""

import os

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip probing TBB; an outdated TBB only produces a warning
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range


_TRUTHY = {"1", "true", "yes", "on"}

_backend = (
    "numpy"
    if os.environ.get("BHTSNE_DISABLE_JIT", "").strip().lower() in _TRUTHY or not HAVE_NUMBA
    else "numba"
)


def backend():
    return _backend


def use_numba():
    return _backend == "numba"


def set_backend(name):
    """Switch kernels to ``"numba"`` or ``"numpy"``; returns the previous name."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    previous, _backend = _backend, name
    return previous


def set_threads(n):
    """Cap numba worker threads. Returns the count actually applied."""
    if not HAVE_NUMBA or n is None:
        return None
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def jit(func=None, *, parallel=False):
    """``njit`` with the package's standard options."""

    def wrap(f):
        return njit(cache=True, nogil=True, parallel=parallel, fastmath=False)(f)

    return wrap(func) if func is not None else wrap
