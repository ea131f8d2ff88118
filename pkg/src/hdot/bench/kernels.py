"""Compiled inner loops.  They release the GIL so worker threads run them in parallel."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def gs_block(u, r0, r1, c0, c1):
    """In-place Gauss-Seidel sweep of ``u[r0:r1, c0:c1]`` in row-major order.

    Indexes are storage positions; neighbours outside the block are read as
    they currently are, which is what makes a blocked sweep in lexicographic
    block order equal to the plain point sweep.
    """
    for i in range(r0, r1):
        for j in range(c0, c1):
            u[i, j] = (u[i + 1, j] + u[i - 1, j] + u[i, j + 1] + u[i, j - 1]) / 4.0


@njit(nogil=True, cache=True)
def csr_matvec(indptr, indices, data, x, y, row0, row1):
    """``y[i] = sum_j A[i, j] * x[j]`` for rows ``row0 <= i < row1``."""
    for i in range(row0, row1):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s


def warmup() -> None:
    """Compile the kernels before timing anything."""
    u = np.zeros((3, 3))
    gs_block(u, 1, 2, 1, 2)
    csr_matvec(np.zeros(2, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(1), np.zeros(1), 0, 1)
