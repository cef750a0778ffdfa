"""Hot kernels, compiled when available.

The Cython extension ``corgcn._ckernels`` is used if it was built; otherwise
the NumPy fallback in ``corgcn._kernels_py`` is loaded. Set
``CORGCN_PURE_PYTHON=1`` to force the fallback.

``csr_spmm(indptr, indices, data, x)``
    Dense ``n x d`` product of a CSR matrix with ``x``.
``topk_rows(scores, lam)``
    For each row of a square score block, the column indices of the
    ``min(lam, B - 1)`` largest scores excluding the diagonal, in descending
    score order with ties going to the lower column index.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CORGCN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def csr_spmm(indptr, indices, data, x, impl=None):
    impl = impl or _impl
    return impl.csr_spmm(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(data, dtype=np.float64),
        np.ascontiguousarray(x, dtype=np.float64),
    )


def topk_rows(scores, lam: int, impl=None):
    if lam < 1:
        raise ValueError("lam must be at least 1")
    impl = impl or _impl
    return impl.topk_rows(np.ascontiguousarray(scores, dtype=np.float64), int(lam))


def implementations():
    """Available backends by name, for tests and benchmarks."""
    impls = {"python": _kernels_py}
    try:
        from . import _ckernels

        impls["cython"] = _ckernels
    except ImportError:
        pass
    return impls
