"""Select the compiled kernel core or the numpy fallback at import time.

Set ``SKETCHKM_BACKEND=python`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

GAUSSIAN = 0
POLYNOMIAL = 1
SOBOLEV = 2

_impl = _pykernels
BACKEND = "python"

if os.environ.get("SKETCHKM_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"


def get(name):
    """Return the implementation module for ``name`` ('cython' or 'python')."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def cross_kernel(code, A, B, param, degree=1, impl=None):
    impl = get(impl) if isinstance(impl, str) else (impl or _impl)
    A, B = _c(A), _c(B)
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    return impl.cross_kernel(code, A, B, float(param), int(degree))


def kernel_expansion(code, A, B, beta, param, degree=1, impl=None):
    impl = get(impl) if isinstance(impl, str) else (impl or _impl)
    return impl.kernel_expansion(code, _c(A), _c(B), _c(beta), float(param), int(degree))


def signed_scatter_rows(src, rows, signs, out, impl=None):
    impl = get(impl) if isinstance(impl, str) else (impl or _impl)
    impl.signed_scatter_rows(_c(src), np.ascontiguousarray(rows, dtype=np.int64),
                             _c(signs), out)
    return out
