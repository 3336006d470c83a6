"""Numerical core with a compiled fast path and a NumPy fallback.

The compiled extension is preferred when importable; set MRAGP_BACKEND=pure
to force the fallback. ``BACKEND`` records which one is active.
"""

import os

from .exceptions import PivotError

__all__ = [
    "BACKEND",
    "PivotError",
    "haversine_matrix",
    "kernel_values",
    "ldl_symbolic",
    "ldl_numeric",
    "ldl_solve",
    "load_backend",
]


def load_backend(name):
    """Return the backend module for 'pure' or 'compiled', or None if absent."""
    if name == "pure":
        from . import _pure

        return _pure
    if name == "compiled":
        try:
            from . import _speed
        except ImportError:
            return None
        return _speed
    raise ValueError(f"unknown backend {name!r}")


if os.environ.get("MRAGP_BACKEND", "").strip().lower() == "pure":
    _impl = load_backend("pure")
    BACKEND = "pure"
else:
    _impl = load_backend("compiled")
    BACKEND = "compiled"
    if _impl is None:
        _impl = load_backend("pure")
        BACKEND = "pure"

haversine_matrix = _impl.haversine_matrix
kernel_values = _impl.kernel_values
ldl_numeric = _impl.ldl_numeric
ldl_solve = _impl.ldl_solve

# the symbolic pass runs once per sparsity pattern; the pure version is fine
from . import _pure as _sym_impl

ldl_symbolic = _sym_impl.ldl_symbolic
