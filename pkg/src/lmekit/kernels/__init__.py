"""Hot kernels behind a backend switch.

The numba backend is used unless ``LMEKIT_DISABLE_NUMBA`` is set to a truthy
value (or numba cannot be imported); the numpy backend implements the same
algorithms with batched array operations.
"""

import os

from . import _numpy
from ._common import CONVERGED, MAX_ITERS, OUTSIDE_HULL, STATUS_NAMES

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_BACKENDS = {"numpy": _numpy}
if _numba is not None:
    _BACKENDS["numba"] = _numba


def _default_backend():
    flag = os.environ.get("LMEKIT_DISABLE_NUMBA", "").strip().lower()
    if flag in ("", "0", "false", "no") and "numba" in _BACKENDS:
        return "numba"
    return "numpy"


_active = _default_backend()


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active


def set_backend(name):
    """Switch the kernel backend process-wide; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    prev, _active = _active, name
    return prev


def solve_batch(X, nodes, ptr, idx, beta, h, tol, max_iters, want_grad, backend=None):
    """Dual solve at every row of X over its CSR neighbor list.

    Returns ``(lam, log_z, iters, status, weights, grads, jstar, jstar_ok)``;
    ``weights``/``grads`` are aligned with ``idx``.
    """
    mod = _BACKENDS[backend or _active]
    return mod.solve_batch(X, nodes, ptr, idx, float(beta), float(h), float(tol), int(max_iters), bool(want_grad))


def radius_query(X, pts, origin, cell, dims, starts, order, radius, backend=None):
    mod = _BACKENDS[backend or _active]
    return mod.radius_query(X, pts, origin, float(cell), dims, starts, order, float(radius))


__all__ = [
    "CONVERGED",
    "MAX_ITERS",
    "OUTSIDE_HULL",
    "STATUS_NAMES",
    "available_backends",
    "get_backend",
    "radius_query",
    "set_backend",
    "solve_batch",
]
