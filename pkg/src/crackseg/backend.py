"""Kernel backend selection.

The hot kernels (conv window gather/scatter, bilinear sampling) exist twice:
numba-jitted and pure numpy. The CRACKSEG_BACKEND environment variable picks
the path at import time:

    auto   (default) numba if importable, else numpy
    numba  require numba, fail if missing
    numpy  force the pure-numpy fallback

Both paths are deterministic; `benchmarks/bench_kernels.py` compares them.
"""

from __future__ import annotations

import os

from .errors import ConfigError

_choice = os.environ.get("CRACKSEG_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"CRACKSEG_BACKEND must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    from . import _kernels_numpy as _impl
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise ConfigError("CRACKSEG_BACKEND=numba but numba is not importable")
        from . import _kernels_numpy as _impl
        BACKEND = "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
bilinear_fwd = _impl.bilinear_fwd
bilinear_bwd = _impl.bilinear_bwd


def backend_name() -> str:
    """Active kernel backend, either 'numba' or 'numpy'."""
    return BACKEND
