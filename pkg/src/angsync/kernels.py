"""Hot loops, dispatched to the Cython build when it is importable.

Set ``ANGSYNC_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("ANGSYNC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

triangles_directed = _impl.triangles_directed
triangles_undirected = _impl.triangles_undirected
wrapped_sq_grid = _impl.wrapped_sq_grid


def backends():
    """Map of backend name -> kernel module, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
