"""Hot rasterization kernels with backend selection at import time.

The compiled Cython extension is used when available; setting the
environment variable ``RDC_PURE_PYTHON=1`` (or a failed build) selects the
numpy fallback. Both backends are bit-identical; see
``benchmarks/bench_kernels.py`` for the speed comparison.
"""

import os

from . import _zbuffer_np

if os.environ.get("RDC_PURE_PYTHON"):
    _impl = _zbuffer_np
    BACKEND = "python"
else:
    try:
        from . import _zbuffer_cy as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _zbuffer_np
        BACKEND = "python"

rasterize_triangles = _impl.rasterize_triangles
scatter_min = _impl.scatter_min


def backend() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return BACKEND
