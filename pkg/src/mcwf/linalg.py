"""Complex dense and CSR sparse linear algebra for the trajectory engine.

Scalars are 64-bit complex (``Complex128 = complex``); dense vectors and
matrices are numpy ``complex128`` arrays (matrices square, row-major).
Sparse matrices use the CSR layout with column indices sorted inside each
row, which pins the summation order of ``spmv`` and hence bitwise
reproducibility of every run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log2

import numpy as np

from ._kernels import csr_matvec

Complex128 = complex

__all__ = [
    "Complex128", "CsrMatrix", "as_vector", "as_matrix", "dagger", "matmul",
    "add", "scale", "tensor", "to_csr", "spmv", "inner", "norm_sq", "expm",
]


def as_vector(data) -> np.ndarray:
    """Validate and return a dense complex vector (dim >= 1)."""
    v = np.ascontiguousarray(data, dtype=np.complex128)
    if v.ndim != 1 or v.shape[0] < 1:
        raise ValueError(f"expected a 1-d vector of positive length, got shape {v.shape}")
    return v


def as_matrix(data) -> np.ndarray:
    """Validate and return a square dense complex matrix."""
    m = np.ascontiguousarray(data, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class CsrMatrix:
    """Square complex matrix in compressed sparse row form.

    ``row_ptr`` is non-decreasing with ``row_ptr[0] == 0``; column indices
    are strictly increasing within each row and no stored entry is an
    explicit zero (guaranteed by :func:`to_csr`).
    """

    n: int
    row_ptr: np.ndarray
    col_ind: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_ind", np.ascontiguousarray(self.col_ind, dtype=np.int64))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.complex128))
        if self.n < 1:
            raise ValueError("CsrMatrix dimension must be positive")
        rp = self.row_ptr
        if rp.shape[0] != self.n + 1 or rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be non-decreasing, start at 0 and have n+1 entries")
        if self.col_ind.shape[0] != rp[-1] or self.values.shape[0] != rp[-1]:
            raise ValueError("col_ind/values length must equal row_ptr[n]")
        if self.col_ind.size:
            if self.col_ind.min() < 0 or self.col_ind.max() >= self.n:
                raise ValueError("column index out of range")
            for i in range(self.n):
                cols = self.col_ind[rp[i]:rp[i + 1]]
                if cols.size > 1 and np.any(np.diff(cols) <= 0):
                    raise ValueError(f"column indices not strictly increasing in row {i}")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=np.complex128)
        for i in range(self.n):
            sl = slice(self.row_ptr[i], self.row_ptr[i + 1])
            out[i, self.col_ind[sl]] = self.values[sl]
        return out


def dagger(m: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return np.ascontiguousarray(as_matrix(m).conj().T)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a + b


def scale(c: Complex128, a: np.ndarray) -> np.ndarray:
    return complex(c) * as_matrix(a)


def tensor(*factors: np.ndarray) -> np.ndarray:
    """Kronecker product of one or more matrices (or vectors)."""
    if not factors:
        raise ValueError("tensor() needs at least one factor")
    out = np.asarray(factors[0], dtype=np.complex128)
    for f in factors[1:]:
        out = np.kron(out, np.asarray(f, dtype=np.complex128))
    return out


def to_csr(m: np.ndarray, drop_tol: float = 0.0) -> CsrMatrix:
    """Compress a dense matrix, omitting entries with |value| <= drop_tol."""
    if drop_tol < 0:
        raise ValueError("drop_tol must be non-negative")
    m = as_matrix(m)
    n = m.shape[0]
    keep = np.abs(m) > drop_tol
    counts = keep.sum(axis=1)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    col_ind = np.nonzero(keep)[1].astype(np.int64)
    values = m[keep]
    return CsrMatrix(n, row_ptr, col_ind, values)


def spmv(m: CsrMatrix, v: np.ndarray) -> np.ndarray:
    """y = M @ v with a fixed left-to-right summation order per row."""
    v = as_vector(v)
    if v.shape[0] != m.n:
        raise ValueError(f"dimension mismatch: matrix {m.n}, vector {v.shape[0]}")
    out = np.empty(m.n, dtype=np.complex128)
    csr_matvec(m.row_ptr, m.col_ind, m.values, v, out)
    return out


def inner(u: np.ndarray, v: np.ndarray) -> Complex128:
    """<u|v> with the first argument conjugated."""
    u, v = as_vector(u), as_vector(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return complex(np.vdot(u, v))


def norm_sq(v: np.ndarray) -> float:
    return float(np.vdot(v, v).real)


# Pade-13 coefficients for the scaling-and-squaring exponential.
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
    33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def expm(m: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a degree-13 Pade
    approximant.  Only used at problem-construction time (displacement
    operators), never in the integration hot path."""
    a = as_matrix(m).copy()
    nrm = float(np.max(np.sum(np.abs(a), axis=1))) if a.size else 0.0
    if not np.isfinite(nrm):
        raise ValueError(f"expm: non-finite input (inf-norm {nrm})")
    s = 0
    if nrm > _THETA13:
        s = int(ceil(log2(nrm / _THETA13)))
        if s > 1023:
            raise ValueError(f"expm: scaling overflow, inf-norm {nrm:g}")
        a /= 2.0 ** s
    b = _PADE13
    ident = np.eye(a.shape[0], dtype=np.complex128)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r
