"""NumPy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def csr_spmm(indptr, indices, data, x):
    n = len(indptr) - 1
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    if len(indices) == 0:
        return out
    contrib = data[:, None] * x[indices]
    starts = indptr[:-1]
    nonempty = indptr[1:] > starts
    out[nonempty] = np.add.reduceat(contrib, starts[nonempty], axis=0)
    return out


def topk_rows(scores, lam):
    b = scores.shape[0]
    k = max(0, min(lam, b - 1))
    if k == 0:
        return np.empty((b, 0), dtype=np.int64)
    key = -np.asarray(scores, dtype=np.float64)
    np.fill_diagonal(key, np.inf)
    # stable sort keeps the lower index first among equal scores
    return np.argsort(key, axis=1, kind="stable")[:, :k].astype(np.int64)
