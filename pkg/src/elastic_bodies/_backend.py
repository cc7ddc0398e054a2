"""Kernel backend selection.

The per-face kernels exist twice: a numba implementation (default when numba
imports) and a vectorised numpy implementation. Set ``ELASTIC_BACKEND=numpy``
to force the fallback, e.g. for debugging or on platforms without numba.
"""

import os

BACKEND_ENV = "ELASTIC_BACKEND"
THREADS_ENV = "ELASTIC_THREADS"

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    HAS_NUMBA = False


def requested_backend():
    name = os.environ.get(BACKEND_ENV, "").strip().lower()
    if name in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise ImportError(f"{BACKEND_ENV}=numba but numba is not installed")
    return name


def default_threads():
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            n = int(value)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def set_threads(n):
    """Cap worker parallelism (numba thread pool and pairwise thread pools)."""
    global _threads
    n = max(1, int(n))
    _threads = n
    if HAS_NUMBA and requested_backend() == "numba":
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def get_threads():
    return _threads if _threads is not None else default_threads()


_threads = None
