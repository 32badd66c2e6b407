"""Backend selection for the sparse kernels.

The Cython extension is used when it was built; otherwise the numpy
fallback is loaded. Setting ``ICEBERG_PURE_PYTHON=1`` forces the fallback.
``ICEBERG_THREADS`` caps the number of OpenMP threads the compiled kernels use.
"""

import os

import numpy as np

from iceberg import _fallback

try:
    from iceberg import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

if _compiled is not None and not os.environ.get("ICEBERG_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def num_threads():
    try:
        return max(1, int(os.environ.get("ICEBERG_THREADS", "1")))
    except ValueError:
        return 1


def _module(backend):
    name = backend or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}") from None


def _csr_args(indptr, indices, data):
    return (
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(data, dtype=np.float64),
    )


def csr_spmm(indptr, indices, data, dense, backend=None):
    """Return ``A @ dense`` for the CSR matrix ``A = (indptr, indices, data)``."""
    dense = np.ascontiguousarray(dense, dtype=np.float64)
    return _module(backend).csr_spmm(*_csr_args(indptr, indices, data), dense, num_threads())


def diffusion_step(indptr, indices, data, current, restart, alpha, backend=None):
    """Return ``(1 - alpha) * A @ current + alpha * restart``."""
    current = np.ascontiguousarray(current, dtype=np.float64)
    restart = np.ascontiguousarray(restart, dtype=np.float64)
    return _module(backend).diffusion_step(
        *_csr_args(indptr, indices, data), current, restart, float(alpha), num_threads()
    )
