"""Dense and sparse nonnegative matrix containers plus the product kernels
the factorization driver needs.

Dense data is stored column-major (Fortran order) because the driver's unit
of work is a column vector: data columns in the coefficient step, transposed
component rows in the component step. Sparse data is compressed sparse
column with strictly increasing row indices per column and no explicit
zeros, so ``nnz`` is exactly the number of stored nonzeros.

Vectors are plain 1-D float64 ``numpy`` arrays throughout.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DataDomainError, MatrixSizeError


class DenseMatrix:
    """Column-major dense matrix of float64.

    The backing 2-D array is always Fortran-ordered, so ``column(j)`` is a
    contiguous view and ``data`` is the flat column-major buffer.
    """

    __slots__ = ("array",)

    def __init__(self, array):
        arr = np.asfortranarray(array, dtype=np.float64)
        if arr.ndim != 2:
            raise MatrixSizeError(f"expected 2-D array, got ndim={arr.ndim}")
        self.array = arr

    @classmethod
    def zeros(cls, rows, cols):
        return cls(np.zeros((rows, cols), order="F"))

    @property
    def rows(self):
        return self.array.shape[0]

    @property
    def cols(self):
        return self.array.shape[1]

    @property
    def data(self):
        """Flat column-major view of the entries."""
        return self.array.reshape(-1, order="F")

    def column(self, j):
        return self.array[:, j]

    def copy(self):
        return DenseMatrix(self.array.copy(order="F"))

    def __repr__(self):
        return f"DenseMatrix({self.rows}x{self.cols})"


class SparseMatrix:
    """Compressed sparse-column matrix of strictly positive float64 values.

    Invariants enforced at construction: monotone column pointers, strictly
    increasing row indices within each column, all stored values finite and
    > 0 (explicit zeros are dropped by the builders, never stored).
    """

    __slots__ = ("rows", "cols", "indptr", "indices", "values")

    def __init__(self, rows, cols, indptr, indices, values, validate=True):
        self.rows = int(rows)
        self.cols = int(cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if validate:
            self._validate()

    def _validate(self):
        if self.indptr.shape != (self.cols + 1,):
            raise MatrixSizeError("column pointer array must have cols+1 entries")
        if self.indptr[0] != 0 or self.indptr[-1] != len(self.values):
            raise MatrixSizeError("column pointers must span [0, nnz]")
        if np.any(np.diff(self.indptr) < 0):
            raise MatrixSizeError("column pointers must be non-decreasing")
        if len(self.indices) != len(self.values):
            raise MatrixSizeError("row-index and value arrays must match")
        if len(self.indices) and (
            self.indices.min() < 0 or self.indices.max() >= self.rows
        ):
            raise MatrixSizeError("row index out of range")
        for j in range(self.cols):
            lo, hi = self.indptr[j], self.indptr[j + 1]
            if np.any(np.diff(self.indices[lo:hi]) <= 0):
                raise MatrixSizeError(f"row indices not strictly increasing in column {j}")
        if not np.all(np.isfinite(self.values)):
            raise DataDomainError("sparse values must be finite")
        if np.any(self.values <= 0):
            raise DataDomainError("stored sparse values must be > 0 (no explicit zeros)")

    @classmethod
    def from_triplets(cls, rows, cols, i, j, v, sum_duplicates=True):
        """Build from coordinate triplets, summing duplicates and dropping zeros."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        v = np.asarray(v, dtype=np.float64)
        if not (len(i) == len(j) == len(v)):
            raise MatrixSizeError("triplet arrays must have equal length")
        if len(i) and (i.min() < 0 or i.max() >= rows or j.min() < 0 or j.max() >= cols):
            raise MatrixSizeError("triplet index out of range")
        order = np.lexsort((i, j))
        i, j, v = i[order], j[order], v[order]
        if sum_duplicates and len(i):
            keys = j * rows + i
            uniq, inverse = np.unique(keys, return_inverse=True)
            summed = np.zeros(len(uniq))
            np.add.at(summed, inverse, v)
            i = (uniq % rows).astype(np.int64)
            j = (uniq // rows).astype(np.int64)
            v = summed
        keep = v != 0.0
        i, j, v = i[keep], j[keep], v[keep]
        indptr = np.zeros(cols + 1, dtype=np.int64)
        np.add.at(indptr, j + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(rows, cols, indptr, i, v)

    @classmethod
    def from_dense(cls, dense):
        arr = dense.array if isinstance(dense, DenseMatrix) else np.asarray(dense, dtype=np.float64)
        i, j = np.nonzero(arr)
        order = np.lexsort((i, j))
        i, j = i[order], j[order]
        return cls.from_triplets(arr.shape[0], arr.shape[1], i, j, arr[i, j], sum_duplicates=False)

    @property
    def nnz(self):
        return len(self.values)

    def column(self, j):
        """Row indices and values of column j, as views."""
        if not 0 <= j < self.cols:
            raise IndexError(f"column {j} out of range for {self.cols} columns")
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def transpose(self):
        """CSC copy of the transpose (row access to this matrix)."""
        col_of = np.repeat(np.arange(self.cols, dtype=np.int64), np.diff(self.indptr))
        return SparseMatrix.from_triplets(
            self.cols, self.rows, col_of, self.indices, self.values, sum_duplicates=False
        )

    def to_dense(self):
        out = np.zeros((self.rows, self.cols), order="F")
        col_of = np.repeat(np.arange(self.cols, dtype=np.int64), np.diff(self.indptr))
        out[self.indices, col_of] = self.values
        return DenseMatrix(out)

    def sum_squares(self):
        return float(self.values @ self.values)

    def __repr__(self):
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def require_nonnegative(mat, name="matrix"):
    """Raise DataDomainError unless every entry of mat is finite and >= 0."""
    if isinstance(mat, SparseMatrix):
        vals = mat.values
    else:
        vals = mat.array
    if not np.all(np.isfinite(vals)):
        raise DataDomainError(f"{name} contains NaN or Inf")
    if vals.size and vals.min() < 0:
        raise DataDomainError(f"{name} contains negative entries")


def gram(m):
    """Gram matrix of the columns of m: the r x r product Mt M.

    The upper triangle is computed once and mirrored, so the result is
    symmetric to the last bit.
    """
    arr = m.array if isinstance(m, DenseMatrix) else np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataDomainError("gram input contains NaN or Inf")
    r = arr.shape[1]
    if r * r > np.iinfo(np.intp).max:
        raise MatrixSizeError(f"gram result {r}x{r} exceeds addressable size")
    prod = arr.T @ arr
    upper = np.triu(prod)
    out = upper + upper.T
    out[np.diag_indices(r)] = np.diag(prod)
    return DenseMatrix(out)


def sparse_col_times_dense(v, col, g):
    """Product Gt V_col for one sparse column: length-r vector, cost O(nnz * r)."""
    g_arr = g.array if isinstance(g, DenseMatrix) else np.asarray(g, dtype=np.float64)
    if g_arr.shape[0] != v.rows:
        raise MatrixSizeError(
            f"dense rows {g_arr.shape[0]} must match sparse rows {v.rows}"
        )
    rows, vals = v.column(col)
    if len(rows) == 0:
        return np.zeros(g_arr.shape[1])
    return g_arr[rows, :].T @ vals


def rank_one_accumulate(acc, u, v):
    """In-place acc += outer(u, v)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    arr = acc.array if isinstance(acc, DenseMatrix) else acc
    if arr.shape != (len(u), len(v)):
        raise MatrixSizeError(
            f"accumulator shape {arr.shape} does not match outer product "
            f"({len(u)}, {len(v)})"
        )
    arr += np.outer(u, v)
    return acc


def frobenius_objective(v, g, f):
    """Half squared Frobenius residual 0.5 * ||V - GF||^2.

    For sparse V the residual is expanded as
    0.5 * (||V||^2 - 2 * sum_nnz V_ij (GF)_ij + sum_j Fj' (Gt G) Fj)
    so the dense product GF is never materialized.
    """
    g_arr = g.array if isinstance(g, DenseMatrix) else np.asarray(g, dtype=np.float64)
    f_arr = f.array if isinstance(f, DenseMatrix) else np.asarray(f, dtype=np.float64)
    if g_arr.shape[1] != f_arr.shape[0]:
        raise MatrixSizeError(
            f"inner dimensions differ: G is {g_arr.shape}, F is {f_arr.shape}"
        )
    if isinstance(v, SparseMatrix):
        if v.rows != g_arr.shape[0] or v.cols != f_arr.shape[1]:
            raise MatrixSizeError(
                f"V is {v.rows}x{v.cols}, GF would be "
                f"{g_arr.shape[0]}x{f_arr.shape[1]}"
            )
        q = gram(DenseMatrix(g_arr)).array
        col_of = np.repeat(np.arange(v.cols, dtype=np.int64), np.diff(v.indptr))
        gf_at_nnz = np.einsum(
            "ij,ij->i", g_arr[v.indices, :], f_arr[:, col_of].T
        ) if v.nnz else np.zeros(0)
        cross = float(gf_at_nnz @ v.values)
        quad = float(np.sum((q @ f_arr) * f_arr))
        return 0.5 * (v.sum_squares() - 2.0 * cross + quad)
    v_arr = v.array if isinstance(v, DenseMatrix) else np.asarray(v, dtype=np.float64)
    if v_arr.shape != (g_arr.shape[0], f_arr.shape[1]):
        raise MatrixSizeError(
            f"V is {v_arr.shape}, GF would be ({g_arr.shape[0]}, {f_arr.shape[1]})"
        )
    resid = v_arr - g_arr @ f_arr
    return 0.5 * float(np.sum(resid * resid))
