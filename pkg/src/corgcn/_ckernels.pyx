# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics must match corgcn._kernels_py exactly."""
import numpy as np


def csr_spmm(const long long[::1] indptr, const long long[::1] indices,
             const double[::1] data, const double[:, ::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, c
    cdef long long p, j
    cdef double w
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                w = data[p]
                for c in range(d):
                    o[i, c] += w * x[j, c]
    return out


def topk_rows(const double[:, ::1] scores, Py_ssize_t lam):
    cdef Py_ssize_t b = scores.shape[0]
    cdef Py_ssize_t k = lam if lam < b - 1 else b - 1
    if k < 0:
        k = 0
    out = np.empty((b, k), dtype=np.int64)
    if k == 0:
        return out
    best_buf = np.empty(k, dtype=np.float64)
    cdef long long[:, ::1] o = out
    cdef double[::1] best = best_buf
    cdef Py_ssize_t i, j, cnt, pos
    cdef double v
    with nogil:
        for i in range(b):
            cnt = 0
            for j in range(b):
                if j == i:
                    continue
                v = scores[i, j]
                if cnt < k:
                    pos = cnt
                    cnt += 1
                elif v > best[k - 1]:
                    pos = k - 1
                else:
                    continue
                # equal scores keep the earlier (lower) index in front
                while pos > 0 and best[pos - 1] < v:
                    best[pos] = best[pos - 1]
                    o[i, pos] = o[i, pos - 1]
                    pos -= 1
                best[pos] = v
                o[i, pos] = j
    return out
