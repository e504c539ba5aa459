"""Kernel backend selection.

The per-round simulation kernel exists twice: a numba-jitted scalar loop
and a pure-numpy vectorized fallback.  Both consume the same pregenerated
random inputs and produce bit-identical tallies; the env variable
``PMQKD_BACKEND`` (``numba`` or ``numpy``) forces one, otherwise numba is
used when importable.
"""
from __future__ import annotations

import os
import warnings

ENV_VAR = "PMQKD_BACKEND"


def _resolve() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            warnings.warn("numba requested but not importable; falling back to numpy")
        return "numpy"
    return "numba"


BACKEND = _resolve()


def active_backend() -> str:
    return BACKEND


def get_kernel():
    """Return the round-simulation kernel for the active backend."""
    if BACKEND == "numba":
        from ._kernels_numba import simulate_rounds
    else:
        from ._kernels_numpy import simulate_rounds
    return simulate_rounds


def get_kernel_for(name: str):
    """Return a specific backend's kernel (used by the benchmark)."""
    if name == "numba":
        from ._kernels_numba import simulate_rounds
    elif name == "numpy":
        from ._kernels_numpy import simulate_rounds
    else:
        raise ValueError(f"unknown backend {name!r}")
    return simulate_rounds
