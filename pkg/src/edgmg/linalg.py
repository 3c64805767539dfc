"""Dense and sparse kernels: CSR matrices, LU with partial pivoting, symmetric eigenvalues.

Everything here is deterministic: assembly sums duplicates in a fixed order,
sweeps run in index order, and no multi-threaded reductions are used.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "SparseMatrix",
    "DenseFactorization",
    "SingularMatrixError",
    "csr_from_coo",
    "spmv",
    "transpose_apply",
    "factorize",
    "back_solve",
    "sym_eig",
]


class SingularMatrixError(RuntimeError):
    """Raised when a dense factorization hits a (numerically) zero pivot."""

    def __init__(self, pivot_index, pivot_value):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(
            f"singular matrix: pivot {pivot_index} has magnitude {abs(pivot_value):.3e}"
        )


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed sparse row matrix with sorted, unique column indices per row."""

    shape: tuple
    indptr: np.ndarray   # int64, len nrows+1
    indices: np.ndarray  # int32
    data: np.ndarray     # float64

    @property
    def nnz(self):
        return self.data.shape[0]

    def diagonal(self):
        n = min(self.shape)
        d = np.zeros(n)
        for i in range(n):
            row = slice(self.indptr[i], self.indptr[i + 1])
            hit = np.searchsorted(self.indices[row], i)
            lo = self.indptr[i]
            if lo + hit < self.indptr[i + 1] and self.indices[lo + hit] == i:
                d[i] = self.data[lo + hit]
        return d

    def diagonal_positions(self):
        """Index into ``data`` of each diagonal entry; -1 where the diagonal is absent."""
        n = min(self.shape)
        pos = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            hit = lo + np.searchsorted(self.indices[lo:hi], i)
            if hit < hi and self.indices[hit] == i:
                pos[i] = hit
        return pos

    def todense(self):
        out = np.zeros(self.shape)
        for i in range(self.shape[0]):
            row = slice(self.indptr[i], self.indptr[i + 1])
            out[i, self.indices[row]] = self.data[row]
        return out

    def __matmul__(self, x):
        return spmv(self, x)


def csr_from_coo(nrows, ncols, rows, cols, vals, drop_tol=0.0):
    """Build a SparseMatrix from COO triplets, summing duplicates.

    The (row, col) pairs are sorted with a stable key, so identical input
    produces identical output bit for bit.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if rows.shape != cols.shape or rows.shape != vals.shape:
        raise ValueError("rows, cols, vals must have equal length")
    if rows.size:
        if rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols:
            raise ValueError("COO index out of range")
    key = rows * np.int64(ncols) + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    vals = vals[order]
    # collapse duplicate keys
    if key.size:
        boundary = np.empty(key.size, dtype=bool)
        boundary[0] = True
        boundary[1:] = key[1:] != key[:-1]
        starts = np.flatnonzero(boundary)
        summed = np.add.reduceat(vals, starts)
        ukey = key[starts]
    else:
        summed = vals
        ukey = key
    if drop_tol > 0.0 and ukey.size:
        keep = np.abs(summed) > drop_tol
        ukey, summed = ukey[keep], summed[keep]
    urows = (ukey // ncols).astype(np.int64)
    ucols = (ukey % ncols).astype(np.int32)
    indptr = np.zeros(nrows + 1, dtype=np.int64)
    np.add.at(indptr, urows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return SparseMatrix((nrows, ncols), indptr, ucols, summed)


@njit(cache=True)
def _spmv_kernel(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        out[i] = s


@njit(cache=True)
def _spmv_t_kernel(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        xi = x[i]
        for k in range(indptr[i], indptr[i + 1]):
            out[indices[k]] += data[k] * xi


@njit(cache=True)
def _gs_forward_kernel(indptr, indices, data, diag_pos, x, b):
    n = indptr.shape[0] - 1
    for i in range(n):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * x[indices[k]]
        d = data[diag_pos[i]]
        x[i] += s / d


@njit(cache=True)
def _gs_backward_kernel(indptr, indices, data, diag_pos, x, b):
    n = indptr.shape[0] - 1
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * x[indices[k]]
        d = data[diag_pos[i]]
        x[i] += s / d


def spmv(A: SparseMatrix, x):
    """y = A x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    out = np.empty(A.shape[0])
    _spmv_kernel(A.indptr, A.indices, A.data, x, out)
    return out


def transpose_apply(A: SparseMatrix, x):
    """y = A^T x without forming the transpose."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape}^T @ {x.shape}")
    out = np.zeros(A.shape[1])
    _spmv_t_kernel(A.indptr, A.indices, A.data, x, out)
    return out


@dataclass(frozen=True)
class DenseFactorization:
    """LU factors of a row-permuted square matrix (Doolittle, partial pivoting)."""

    lu: np.ndarray
    perm: np.ndarray  # row permutation: factored matrix is A[perm]


def factorize(A) -> DenseFactorization:
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("factorize expects a square matrix")
    n = A.shape[0]
    perm = np.arange(n)
    scale = np.max(np.abs(A)) if n else 0.0
    tol = max(scale, 1.0) * np.finfo(np.float64).eps * n * 4
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[p, k]) <= tol:
            raise SingularMatrixError(k, A[p, k])
        if p != k:
            A[[k, p]] = A[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        A[k + 1 :, k] /= A[k, k]
        A[k + 1 :, k + 1 :] -= np.outer(A[k + 1 :, k], A[k, k + 1 :])
    return DenseFactorization(A, perm)


def back_solve(fact: DenseFactorization, b):
    """Solve A x = b (vector or matrix right-hand side) from the stored factors."""
    lu, perm = fact.lu, fact.perm
    n = lu.shape[0]
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    x = b.reshape(n, -1)[perm].copy()
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] -= lu[i, i + 1 :] @ x[i + 1 :]
        x[i] /= lu[i, i]
    return x[:, 0] if squeeze else x


def _householder_tridiag(A):
    """Reduce a symmetric matrix to tridiagonal (d, e) via Householder reflections."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    d = np.zeros(n)
    e = np.zeros(n)
    for k in range(n - 2):
        x = A[k + 1 :, k].copy()
        nrm = np.sqrt(np.dot(x, x))
        if nrm == 0.0:
            e[k] = 0.0
            continue
        if x[0] < 0:
            nrm = -nrm
        v = x.copy()
        v[0] += nrm
        v /= np.sqrt(np.dot(v, v))
        # apply P = I - 2 v v^T from both sides to the trailing block
        B = A[k + 1 :, k + 1 :]
        w = B @ v
        tau = np.dot(v, w)
        w -= tau * v
        B -= 2.0 * np.outer(v, w) + 2.0 * np.outer(w, v)
        A[k + 1 :, k] = 0.0
        A[k, k + 1 :] = 0.0
        A[k + 1, k] = -nrm
        A[k, k + 1] = -nrm
        e[k] = -nrm
    for k in range(n):
        d[k] = A[k, k]
    if n >= 2:
        e[n - 2] = A[n - 1, n - 2]
    return d, e[: max(n - 1, 0)]


@njit(cache=True)
def _ql_implicit(d, e, max_sweeps=64):
    """Eigenvalues of a symmetric tridiagonal matrix by QL with implicit shifts."""
    n = d.shape[0]
    ee = np.zeros(n)
    ee[: n - 1] = e
    for l in range(n):
        for _ in range(max_sweeps):
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(ee[m]) <= 1e-300 or abs(ee[m]) <= 2.3e-16 * dd:
                    break
                m += 1
            if m == l:
                break
            g = (d[l + 1] - d[l]) / (2.0 * ee[l])
            r = np.hypot(g, 1.0)
            sgn = 1.0 if g >= 0 else -1.0
            g = d[m] - d[l] + ee[l] / (g + sgn * r)
            s = 1.0
            c = 1.0
            p = 0.0
            interrupted = False
            for i in range(m - 1, l - 1, -1):
                f = s * ee[i]
                b = c * ee[i]
                r = np.hypot(f, g)
                ee[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    ee[m] = 0.0
                    interrupted = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
            if not interrupted:
                d[l] -= p
                ee[l] = g
                ee[m] = 0.0
    return d


def sym_eig(A):
    """All eigenvalues of a dense symmetric matrix, ascending."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("sym_eig expects a square matrix")
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > 1e-10 * max(np.max(np.abs(A)), 1e-300):
        raise ValueError("sym_eig expects a symmetric matrix")
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    if n == 1:
        return A.diagonal().copy()
    d, e = _householder_tridiag(0.5 * (A + A.T))
    vals = _ql_implicit(d.copy(), e.copy())
    return np.sort(vals)
