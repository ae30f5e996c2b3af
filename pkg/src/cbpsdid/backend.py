"""Kernel backend selection.

The hot Newton kernels exist twice: numba-compiled (`_kernels_nb`) and pure
numpy (`_kernels_np`). The environment variable ``CBPSDID_BACKEND`` picks one:

    auto   -- numba if importable, else numpy (default)
    numba  -- require numba, raise if unavailable
    numpy  -- force the pure-numpy path

Both paths implement identical math; results agree to floating-point noise.
``benchmarks/bench_backends.py`` compares their throughput.
"""

import os

from . import _kernels_np

_ENV_VAR = "CBPSDID_BACKEND"

_kernels = None
_name = None


def _load(choice: str):
    if choice == "numpy":
        return _kernels_np, "numpy"
    if choice in ("numba", "auto"):
        try:
            from . import _kernels_nb

            return _kernels_nb, "numba"
        except ImportError:
            if choice == "numba":
                raise
            return _kernels_np, "numpy"
    raise ValueError(
        f"{_ENV_VAR} must be one of auto/numba/numpy, got {choice!r}"
    )


def kernels():
    """Return the active kernel module (selected once per process)."""
    global _kernels, _name
    if _kernels is None:
        choice = os.environ.get(_ENV_VAR, "auto").strip().lower() or "auto"
        _kernels, _name = _load(choice)
    return _kernels


def backend_name() -> str:
    kernels()
    return _name
