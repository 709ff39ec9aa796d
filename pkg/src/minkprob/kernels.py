"""Select the compiled kernel backend, falling back to pure python.

Set MINKPROB_PURE=1 to force the fallback (used by the benchmark and the
backend-equivalence tests).
"""
import os

if os.environ.get("MINKPROB_PURE", "") not in ("", "0"):
    from . import _kernels_py as impl
else:
    try:
        from . import _kernels as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as impl

BACKEND = impl.BACKEND
cell_area = impl.cell_area
cell_areas = impl.cell_areas
cell_areas_jacobian = impl.cell_areas_jacobian
monotone_sweep = impl.monotone_sweep
facet_polygon_areas = impl.facet_polygon_areas


def get_backends():
    """Both backends (compiled may be None), for comparison runs."""
    from . import _kernels_py
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        _kernels = None
    return _kernels, _kernels_py
