"""Kernel backend selection.

The numba backend is the default hot path; set SCTNET_BACKEND=numpy to force
the pure-numpy fallback (or =numba to fail loudly if numba cannot compile).
Both backends expose the same functions with identical semantics; see
``sctnet.bench`` for a side-by-side timing comparison.
"""

import os

from . import numpy_backend

_REQUESTED = os.environ.get("SCTNET_BACKEND", "auto").lower()

if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"SCTNET_BACKEND={_REQUESTED!r} not recognized; use auto, numba or numpy")

if _REQUESTED == "numpy":
    _impl = numpy_backend
else:
    try:
        from . import numba_backend as _impl
    except ImportError:
        if _REQUESTED == "numba":
            raise
        _impl = numpy_backend

im2col3x3 = _impl.im2col3x3
maxpool2x2 = _impl.maxpool2x2
maxpool2x2_backward = _impl.maxpool2x2_backward
bilinear_warp = _impl.bilinear_warp


def backend_name() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return _impl.NAME
