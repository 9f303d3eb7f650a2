"""Optional numba acceleration.

Hot kernels are written once as plain Python loops and compiled with numba
when it is importable.  Setting ``DGEAP_BACKEND=numpy`` (or installing
without numba) switches every dispatcher to the vectorized numpy path.
"""

import os

_requested = os.environ.get("DGEAP_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"DGEAP_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

DEFAULT_BACKEND = "numba" if (HAVE_NUMBA and _requested == "numba") else "numpy"

if HAVE_NUMBA:
    prange = numba.prange

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

else:  # pragma: no cover
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def resolve_backend(backend=None):
    """Return ``'numba'`` or ``'numpy'`` for an optional user request."""
    if backend is None:
        return DEFAULT_BACKEND
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is not installed")
    return backend


def max_workers():
    if not HAVE_NUMBA:
        return 1
    return numba.config.NUMBA_NUM_THREADS


def set_workers(workers):
    """Set the numba thread count; a no-op for the numpy backend."""
    if workers is None or not HAVE_NUMBA:
        return
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    numba.set_num_threads(min(workers, max_workers()))


def default_workers():
    env = os.environ.get("DGEAP_WORKERS")
    if env:
        return int(env)
    return max_workers()
