"""Hot numeric kernels with two interchangeable backends.

The "numba" backend JIT-compiles the inner loops (3-D convolution, max
pooling, CSR products); the "numpy" backend is a pure-vectorized fallback
with identical semantics. The active backend is chosen at import time from
the ``FEDSPARSIFY_BACKEND`` environment variable ("numba" or "numpy") and
defaults to numba when it imports cleanly. ``set_backend`` switches at
runtime, which the test suite and ``benchmarks/backend_bench.py`` use to
compare both paths.
"""

import os

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}

try:
    from . import numba_backend

    _BACKENDS["numba"] = numba_backend
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    numba_backend = None


def _initial_backend() -> str:
    requested = os.environ.get("FEDSPARSIFY_BACKEND", "").strip().lower()
    if requested:
        if requested not in ("numba", "numpy"):
            raise ValueError(
                f"FEDSPARSIFY_BACKEND={requested!r} is not valid; "
                "use 'numba' or 'numpy'"
            )
        if requested not in _BACKENDS:
            raise RuntimeError(
                "FEDSPARSIFY_BACKEND=numba but numba failed to import"
            )
        return requested
    return "numba" if "numba" in _BACKENDS else "numpy"


_active_name = _initial_backend()
_active = _BACKENDS[_active_name]


def backend_name() -> str:
    """Name of the currently active kernel backend."""
    return _active_name


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previously active name."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown backend {name!r}; available: {sorted(_BACKENDS)}"
        )
    previous = _active_name
    _active_name = name
    _active = _BACKENDS[name]
    return previous


def conv3d_forward(xp, w, b):
    """Valid 3-D cross-correlation of a pre-padded input, plus bias."""
    return _active.conv3d_forward(xp, w, b)


def conv3d_weight_grad(xp, dy):
    return _active.conv3d_weight_grad(xp, dy)


def conv3d_input_grad(dy, w, xp_shape):
    return _active.conv3d_input_grad(dy, w, xp_shape)


def maxpool3d_forward(x, window):
    """Non-overlapping max pool; returns (out, within-window argmax)."""
    return _active.maxpool3d_forward(x, window)


def maxpool3d_backward(dy, idx, x_shape, window):
    return _active.maxpool3d_backward(dy, idx, x_shape, window)


def csr_matvec(indptr, indices, data, x):
    return _active.csr_matvec(indptr, indices, data, x)


def csr_matmul(indptr, indices, data, dense):
    return _active.csr_matmul(indptr, indices, data, dense)
