"""Numeric backend selection.

Hot inner loops (grid fill, batched Kriging solves) have two
implementations: numba-jitted scalar loops and vectorized numpy. The
jitted path is used when numba imports cleanly and the environment
variable ``RADIOMAP_NO_NUMBA`` is unset; setting it to ``1`` (or
``true``/``yes``) forces the numpy path. Individual entry points in
``kernels`` also accept an explicit ``backend=`` override, which is what
the benchmark script uses to compare the two.
"""

import os


def _env_disabled() -> bool:
    return os.environ.get("RADIOMAP_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}


try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when the jitted backend is active, no-op otherwise."""
    if USING_NUMBA:
        return _numba_njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def wrap(func):
        return func

    return wrap


def resolve_backend(backend=None) -> str:
    """Map an optional override to the concrete backend name."""
    if backend is None:
        return "numba" if USING_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not USING_NUMBA:
        raise RuntimeError("numba backend requested but unavailable (not installed or disabled by RADIOMAP_NO_NUMBA)")
    return backend
