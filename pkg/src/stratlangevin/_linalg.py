"""Small batched linear-algebra helpers.

Products are accumulated in a fixed sequential order over the (small) state
dimension so that results for one trajectory do not depend on how many other
trajectories share the batch. BLAS-backed ``@`` gives no such guarantee.
"""

import numpy as np


def matvec(A, x):
    """Return ``A @ x`` over the last axis of ``x`` for a constant matrix ``A``."""
    A = np.asarray(A, dtype=float)
    d = A.shape[1]
    out = np.empty(x.shape[:-1] + (A.shape[0],))
    for i in range(A.shape[0]):
        acc = A[i, 0] * x[..., 0]
        for j in range(1, d):
            acc = acc + A[i, j] * x[..., j]
        out[..., i] = acc
    return out


def batch_matvec(M, x):
    """Return ``M @ x`` where both carry matching leading batch axes."""
    d = M.shape[-1]
    out = np.empty(x.shape[:-1] + (M.shape[-2],))
    for i in range(M.shape[-2]):
        acc = M[..., i, 0] * x[..., 0]
        for j in range(1, d):
            acc = acc + M[..., i, j] * x[..., j]
        out[..., i] = acc
    return out


def batch_lmatmul(A, M):
    """Return ``A @ M`` for constant ``A`` and batched matrices ``M``."""
    A = np.asarray(A, dtype=float)
    n, k = A.shape
    out = np.empty(M.shape[:-2] + (n, M.shape[-1]))
    for i in range(n):
        acc = A[i, 0] * M[..., 0, :]
        for j in range(1, k):
            acc = acc + A[i, j] * M[..., j, :]
        out[..., i, :] = acc
    return out


def dot(u, v):
    acc = u[..., 0] * v[..., 0]
    for j in range(1, u.shape[-1]):
        acc = acc + u[..., j] * v[..., j]
    return acc


def trace(M):
    acc = M[..., 0, 0]
    for j in range(1, M.shape[-1]):
        acc = acc + M[..., j, j]
    return acc
