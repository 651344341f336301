"""Backend selection between numba kernels and the pure-numpy fallback."""

from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is often too old; avoid the import-time warning
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

BACKEND_ENV = "ROTORLATTICE_BACKEND"
THREADS_ENV = "ROTORLATTICE_THREADS"
BACKENDS = ("numba", "numpy")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise the identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


prange = numba.prange if HAVE_NUMBA else range


def resolve_backend(backend: str | None = None) -> str:
    """Pick a backend: explicit argument, then ``ROTORLATTICE_BACKEND``, then numba if importable."""
    choice = (backend or os.environ.get(BACKEND_ENV, "")).strip().lower() or None
    if choice is None:
        return "numba" if HAVE_NUMBA else "numpy"
    if choice not in BACKENDS:
        raise ValueError(f"unknown backend {choice!r}; choose one of {BACKENDS}")
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return choice


def resolve_threads(threads: int | None = None) -> int:
    """Thread count: ``ROTORLATTICE_THREADS`` overrides the argument; default all cores."""
    env = os.environ.get(THREADS_ENV, "").strip()
    if env:
        threads = int(env)
    if threads is None or threads <= 0:
        threads = os.cpu_count() or 1
    return int(threads)


def set_threads(threads: int) -> int:
    """Apply a thread count to numba, clipped to its configured maximum; returns the value used."""
    if not HAVE_NUMBA:
        return 1
    used = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(used)
    return used
