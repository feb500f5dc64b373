"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``LANEFORMER_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("LANEFORMER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

solve_lap = _impl.solve_lap
lexmin_matching = _impl.lexmin_matching
raster_polyline = _impl.raster_polyline
