"""Numpy versions of the compiled kernels in ``_kernels.pyx``.

The loop runs over positions within a row rather than over rows: pass ``p``
adds the ``p``-th stored entry of every row that has one. Each row is thus
accumulated sequentially in stored column order, exactly like the compiled
loop, while the work inside a pass is vectorized across rows.
"""

import numpy as np


def csr_spmm(indptr, indices, data, dense, num_threads=1):
    n = indptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]), dtype=np.float64)
    row_nnz = np.diff(indptr)
    rows = np.flatnonzero(row_nnz)
    position = 0
    while rows.size:
        slot = indptr[rows] + position
        out[rows] += data[slot, None] * dense[indices[slot]]
        position += 1
        rows = rows[row_nnz[rows] > position]
    return out


def diffusion_step(indptr, indices, data, current, restart, alpha, num_threads=1):
    out = csr_spmm(indptr, indices, data, current)
    keep = 1.0 - alpha
    return keep * out + alpha * restart
