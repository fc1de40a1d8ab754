"""Backend selection for the hot kernels.

The compiled extension ``_core`` is used when it imports; otherwise the numpy
versions in ``_core_py`` are used.  Setting ``DPTCOPULA_PURE_PYTHON=1`` forces
the fallback.  ``BACKEND`` records the choice.
"""

import os

from . import _core_py

if os.environ.get("DPTCOPULA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _core_py
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _core_py

BACKEND = "python" if _impl is _core_py else "compiled"

cell_indices = _impl.cell_indices
weighted_histogram = _impl.weighted_histogram
add_gathered = _impl.add_gathered
garch_variance = _impl.garch_variance
interval_overlap_matrix = _impl.interval_overlap_matrix

__all__ = [
    "BACKEND",
    "cell_indices",
    "weighted_histogram",
    "add_gathered",
    "garch_variance",
    "interval_overlap_matrix",
]
