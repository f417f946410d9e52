"""Backend selection for the compiled kernels.

Set ``RIGIDFLOW_DISABLE_NUMBA=1`` to force the pure-numpy code paths. numba is
optional; without it the numpy paths are used unconditionally.
"""

from __future__ import annotations

import os

ENV_FLAG = "RIGIDFLOW_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


def numba_disabled() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


def default_backend() -> str:
    """``"numba"`` when available and not disabled via the env flag, else ``"numpy"``."""
    if HAVE_NUMBA and not numba_disabled():
        return "numba"
    return "numpy"


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, error_model="numpy")(func)
