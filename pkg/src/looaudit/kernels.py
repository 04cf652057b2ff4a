"""Backend selection for the hot numeric kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
is used. Set ``LOOAUDIT_PURE=1`` to force the fallback. Both backends give
bit-identical results, so trained models and cached artifacts do not depend on
which one ran.
"""

import os

import numpy as np

from . import _kernels_py as python

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

_force_pure = os.environ.get("LOOAUDIT_PURE", "").strip().lower() in ("1", "true", "yes", "on")

if compiled is not None and not _force_pure:
    _impl = compiled
    BACKEND = "compiled"
else:
    _impl = python
    BACKEND = "python"


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed, sequential accumulation order."""
    return _impl.gemm(
        np.ascontiguousarray(a, dtype=np.float64), np.ascontiguousarray(b, dtype=np.float64)
    )


def sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _impl.sq_dists(
        np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(y, dtype=np.float64)
    )
