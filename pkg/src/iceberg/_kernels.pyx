# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CSR kernels. Each output row is accumulated in stored column order,
so results do not depend on the thread count."""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

cnp.import_array()


def csr_spmm(const cnp.int64_t[::1] indptr,
             const cnp.int64_t[::1] indices,
             const double[::1] data,
             const double[:, ::1] dense,
             int num_threads=1):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    cdef Py_ssize_t i, jj, k
    cdef cnp.int64_t j
    cdef double v
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            v = data[jj]
            for k in range(d):
                o[i, k] += v * dense[j, k]
    return out


def diffusion_step(const cnp.int64_t[::1] indptr,
                   const cnp.int64_t[::1] indices,
                   const double[::1] data,
                   const double[:, ::1] current,
                   const double[:, ::1] restart,
                   double alpha,
                   int num_threads=1):
    """out = (1 - alpha) * A @ current + alpha * restart, fused per row."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = current.shape[1]
    cdef Py_ssize_t i, jj, k
    cdef cnp.int64_t j
    cdef double v
    cdef double keep = 1.0 - alpha
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            v = data[jj]
            for k in range(d):
                o[i, k] += v * current[j, k]
        for k in range(d):
            o[i, k] = keep * o[i, k] + alpha * restart[i, k]
    return out
