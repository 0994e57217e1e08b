"""Kernel backend selection and shape dispatch for matrix products.

Two interchangeable kernel sets exist:

* ``compiled`` -- the Cython extension (``pifi._fastkernels``), which
  accumulates every contraction in ascending index order (bit-stable).
* ``numpy`` -- plain np.matmul, used when the extension is not built.

Selection happens once at import. ``PIFI_BACKEND`` overrides it:
``auto`` (default), ``compiled`` (fail if missing), or ``numpy``.
``benches/benchmark_backends.py`` compares the two on real workloads.
"""

import os

import numpy as np

from .errors import ConfigError, ShapeError

_SUPPORTED = (np.float32, np.float64)


def _select():
    choice = os.environ.get("PIFI_BACKEND", "auto")
    if choice not in ("auto", "compiled", "numpy"):
        raise ConfigError(f"PIFI_BACKEND must be auto|compiled|numpy, got {choice!r}")
    if choice in ("auto", "compiled"):
        try:
            from . import _fastkernels
            return "compiled", _fastkernels
        except ImportError:
            if choice == "compiled":
                raise
    from . import _numpykernels
    return "numpy", _numpykernels


_NAME, _IMPL = _select()


def backend_name():
    return _NAME


def _c(a):
    return np.ascontiguousarray(a)


def matmul(a, b):
    """Matrix product with the shapes the framework actually uses.

    Supported: (m,k)@(k,n); (...,m,k)@(k,n) as one flattened gemm; and
    (...,m,k)@(...,k,n) with identical leading dims as a batched gemm.
    """
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if a.dtype != b.dtype or a.dtype.type not in _SUPPORTED:
        raise ShapeError(f"matmul needs matching f32/f64 dtypes, got {a.dtype}/{b.dtype}")
    if a.ndim == 2 and b.ndim == 2:
        return _IMPL.mm2(_c(a), _c(b))
    if b.ndim == 2:
        m, k = a.shape[-2], a.shape[-1]
        flat = _IMPL.mm2(_c(a.reshape(-1, k)), _c(b))
        return flat.reshape(a.shape[:-1] + (b.shape[1],))
    if a.shape[:-2] == b.shape[:-2]:
        lead = a.shape[:-2]
        a3 = _c(a.reshape((-1,) + a.shape[-2:]))
        b3 = _c(b.reshape((-1,) + b.shape[-2:]))
        return _IMPL.mm3(a3, b3).reshape(lead + (a.shape[-2], b.shape[-1]))
    raise ShapeError(f"unsupported matmul broadcast: {a.shape} x {b.shape}")
