# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; see ``_core_py`` for the reference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def cell_indices(x, int level):
    cdef cnp.float64_t[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t i, m = xv.shape[0]
    cdef cnp.int64_t n = (<cnp.int64_t>1) << level
    cdef cnp.int64_t k
    cdef double scale = <double>n
    out = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    for i in range(m):
        k = <cnp.int64_t>floor(xv[i] * scale)
        if k > n - 1:
            k = n - 1
        ov[i] = k
    return out.reshape(np.shape(x))


def weighted_histogram(rows, cols, Py_ssize_t n, double weight):
    cdef cnp.int64_t[::1] rv = np.ascontiguousarray(rows, dtype=np.int64).ravel()
    cdef cnp.int64_t[::1] cv = np.ascontiguousarray(cols, dtype=np.int64).ravel()
    out = np.zeros((n, n), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] ov = out
    cdef Py_ssize_t i
    for i in range(rv.shape[0]):
        ov[rv[i], cv[i]] += weight
    return out


def add_gathered(cnp.float64_t[::1] out, table, idx0, idx1):
    cdef cnp.float64_t[:, ::1] tv = np.ascontiguousarray(table, dtype=np.float64)
    cdef cnp.int64_t[::1] i0 = np.ascontiguousarray(idx0, dtype=np.int64)
    cdef cnp.int64_t[::1] i1 = np.ascontiguousarray(idx1, dtype=np.int64)
    cdef Py_ssize_t i
    for i in range(out.shape[0]):
        out[i] += tv[i0[i], i1[i]]


def garch_variance(r, double omega, double alpha, double beta, double sigma2_0):
    cdef cnp.float64_t[::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef Py_ssize_t t, n = rv.shape[0]
    sigma2 = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] sv = sigma2
    if n == 0:
        return sigma2
    sv[0] = sigma2_0
    for t in range(1, n):
        sv[t] = (omega + alpha * (rv[t - 1] * rv[t - 1])) + beta * sv[t - 1]
    return sigma2


def interval_overlap_matrix(edges, Py_ssize_t n_new):
    cdef cnp.float64_t[::1] ev = np.ascontiguousarray(edges, dtype=np.float64)
    cdef Py_ssize_t n_old = ev.shape[0] - 1
    out = np.zeros((n_old, n_new), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] ov = out
    cdef Py_ssize_t i, j, j0
    cdef double lo, hi, width, a, b, glo, ghi
    for i in range(n_old):
        lo = ev[i]
        hi = ev[i + 1]
        width = hi - lo
        if width <= 0:
            continue
        j0 = <Py_ssize_t>floor(lo * n_new)
        if j0 < 0:
            j0 = 0
        for j in range(j0, n_new):
            glo = (<double>j) / n_new
            if glo >= hi:
                break
            ghi = (<double>(j + 1)) / n_new
            a = hi if hi < ghi else ghi
            b = lo if lo > glo else glo
            if a > b:
                ov[i, j] = (a - b) / width
    return out
