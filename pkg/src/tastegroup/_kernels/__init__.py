"""Hot loops with a numba implementation and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``TASTEGROUP_DISABLE_NUMBA`` is set to a truthy value. Both paths
share one calling convention; see :func:`._numpy.tree_pass`.
"""

import os

from . import _numpy

_disabled = os.environ.get("TASTEGROUP_DISABLE_NUMBA", "").strip().lower() in {
    "1", "true", "yes", "on"}

_impl = _numpy
if not _disabled:
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

BACKEND = "numba" if _impl is not _numpy else "numpy"

tree_pass = _impl.tree_pass
accumulate_rows = _impl.accumulate_rows

__all__ = ["BACKEND", "tree_pass", "accumulate_rows"]
