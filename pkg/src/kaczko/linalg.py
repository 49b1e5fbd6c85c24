"""Row-accessible matrix storage and the small spectral oracle.

Every solver in this package touches the matrix one row at a time, so
:class:`RowMatrix` keeps either a dense row-major array or compressed
sparse rows, and caches the squared row norms.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K

ZERO_ROW_THRESHOLD = 1e-300
DENSE_WORK_LIMIT = 10**6


class SpectralError(RuntimeError):
    """Raised when the spectral oracle cannot certify its answer."""


def _readonly(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


_EMPTY_F = _readonly(np.zeros(0))
_EMPTY_I = _readonly(np.zeros(0, dtype=np.int64))
_EMPTY_2D = _readonly(np.zeros((0, 0)))


def _zeros_ro(m):
    return _readonly(np.zeros(m))


class RowMatrix:
    """Immutable m-by-n matrix with dense or CSR row storage.

    Construction permits zero rows and non-finite entries; call
    :func:`validate` to find them. Structural problems (bad shapes,
    unsorted or out-of-range column indices) raise ``ValueError``.
    """

    def __init__(self, m, n, dense=None, indptr=None, indices=None, data=None):
        m = int(m)
        n = int(n)
        if m < 1 or n < 1:
            raise ValueError(f"matrix must have m >= 1 and n >= 1, got {m}x{n}")
        self.m = m
        self.n = n
        if dense is not None:
            dense = np.asarray(dense, dtype=np.float64)
            if dense.shape != (m, n):
                raise ValueError(f"dense values have shape {dense.shape}, expected {(m, n)}")
            self.sparse = False
            self.dense = _readonly(dense.copy())
            self.indptr = self.indices = _EMPTY_I
            self.data = _EMPTY_F
        else:
            indptr = np.asarray(indptr, dtype=np.int64)
            indices = np.asarray(indices, dtype=np.int64)
            data = np.asarray(data, dtype=np.float64)
            if indptr.shape != (m + 1,) or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
                raise ValueError("indptr must have length m+1, start at 0 and be non-decreasing")
            if indices.shape != data.shape or indices.shape[0] != indptr[-1]:
                raise ValueError("indices/data length must equal indptr[-1]")
            if indices.size and (indices.min() < 0 or indices.max() >= n):
                raise ValueError("column index out of range")
            steps = np.diff(indices)
            row_starts = indptr[1:-1]
            inner = np.ones(steps.shape, dtype=bool)
            inner[row_starts[(row_starts > 0) & (row_starts < indices.size)] - 1] = False
            if np.any(steps[inner] <= 0):
                raise ValueError("column indices must be strictly increasing within each row")
            self.sparse = True
            self.dense = _EMPTY_2D
            self.indptr = _readonly(indptr.copy())
            self.indices = _readonly(indices.copy())
            self.data = _readonly(data.copy())
        self.row_norms_sq = _readonly(K.row_norms_sq(self._raw(), m))
        self.cum_norms = _readonly(np.cumsum(self.row_norms_sq))

    def _raw(self):
        return (self.dense, self.indptr, self.indices, self.data, self.sparse, _EMPTY_F)

    @property
    def kernel_mat(self):
        """Tuple layout consumed by the compiled kernels."""
        return (self.dense, self.indptr, self.indices, self.data, self.sparse, self.row_norms_sq)

    @classmethod
    def from_dense(cls, values):
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        return cls(values.shape[0], values.shape[1], dense=values)

    @classmethod
    def from_csr(cls, indptr, indices, data, shape):
        return cls(shape[0], shape[1], indptr=indptr, indices=indices, data=data)

    @classmethod
    def from_scipy(cls, sp):
        csr = sp.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        return cls.from_csr(csr.indptr, csr.indices, csr.data, csr.shape)

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def nnz(self):
        return int(self.data.size) if self.sparse else int(np.count_nonzero(self.dense))

    @property
    def density(self):
        return self.nnz / (self.m * self.n)

    @property
    def fro_norm_sq(self):
        return float(K.seq_sum(self.row_norms_sq))

    def row(self, i):
        """Row ``i`` as a fresh dense vector."""
        if self.sparse:
            out = np.zeros(self.n)
            s, e = self.indptr[i], self.indptr[i + 1]
            out[self.indices[s:e]] = self.data[s:e]
            return out
        return self.dense[i].copy()

    def to_dense(self):
        if not self.sparse:
            return self.dense.copy()
        out = np.zeros((self.m, self.n))
        rows = np.repeat(np.arange(self.m), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def to_scipy(self):
        import scipy.sparse as sps

        if self.sparse:
            return sps.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)
        return sps.csr_matrix(self.dense)

    def matvec(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        out = np.empty(self.m)
        K.full_residual(self.kernel_mat, _zeros_ro(self.m), x, out)
        return -out

    def __repr__(self):
        kind = "sparse" if self.sparse else "dense"
        return f"RowMatrix({self.m}x{self.n}, {kind}, nnz={self.nnz})"


@dataclass
class ValidationReport:
    zero_rows: list = field(default_factory=list)
    nonfinite_rows: list = field(default_factory=list)

    @property
    def valid(self):
        return not self.zero_rows and not self.nonfinite_rows


def validate(mat):
    """Report zero rows and rows holding NaN/Inf. Never modifies ``mat``."""
    values = mat.data if mat.sparse else mat.dense
    if mat.sparse:
        bad = ~np.isfinite(values)
        rows = np.repeat(np.arange(mat.m), np.diff(mat.indptr))
        nonfinite = sorted(set(rows[bad].tolist()))
    else:
        nonfinite = np.flatnonzero(~np.all(np.isfinite(values), axis=1)).tolist()
    norms = mat.row_norms_sq
    zero = np.flatnonzero(np.isfinite(norms) & (norms < ZERO_ROW_THRESHOLD)).tolist()
    return ValidationReport(zero_rows=zero, nonfinite_rows=nonfinite)


def row_dot(mat, i, x):
    """Inner product of row ``i`` with ``x``."""
    if not 0 <= i < mat.m:
        raise IndexError(f"row {i} out of range for {mat.m} rows")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (mat.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({mat.n},)")
    return float(K.row_dot(mat.kernel_mat, i, x))


@dataclass(frozen=True)
class SpectralStats:
    fro_norm_sq: float
    sigma_min_sq: float
    rank_estimate: int


def gram(mat):
    a = mat.to_dense()
    return a.T @ a


def _pivoted_cholesky(g, threshold):
    """Rank-revealing Cholesky ``g[p][:, p] ~= L L^T``; stops below ``threshold``."""
    n = g.shape[0]
    work = g.copy()
    perm = np.arange(n)
    lower = np.zeros((n, n))
    rank = 0
    for j in range(n):
        diag = np.diag(work)[j:]
        piv = j + int(np.argmax(diag))
        if work[piv, piv] <= threshold:
            break
        if piv != j:
            work[[j, piv]] = work[[piv, j]]
            work[:, [j, piv]] = work[:, [piv, j]]
            lower[[j, piv]] = lower[[piv, j]]
            perm[[j, piv]] = perm[[piv, j]]
        pivot = np.sqrt(work[j, j])
        lower[j, j] = pivot
        lower[j + 1:, j] = work[j + 1:, j] / pivot
        work[j + 1:, j + 1:] -= np.outer(lower[j + 1:, j], lower[j + 1:, j])
        rank += 1
    return lower[:, :rank], perm, rank


def spectral_stats(mat, tol=1e-12, rank_tol=1e-10, max_iter=20000, seed=0):
    """Frobenius norm, smallest nonzero squared singular value and rank.

    ``sigma_min_sq`` comes from inverse power iteration on the Gram matrix
    restricted to its range (a pivoted Cholesky factor deflates the null
    space). Eigenvalues below ``rank_tol * fro_norm_sq`` count as zero.
    """
    if mat.m * mat.n > DENSE_WORK_LIMIT:
        raise ValueError(f"spectral_stats needs m*n <= {DENSE_WORK_LIMIT}, got {mat.m * mat.n}")
    if not validate(mat).valid:
        raise ValueError("matrix has zero or non-finite rows")
    fro = mat.fro_norm_sq
    g = gram(mat)
    lower, _, rank = _pivoted_cholesky(g, rank_tol * fro)
    if rank == 0:
        raise SpectralError("matrix has numerical rank 0")
    # nonzero eigenvalues of G are those of the SPD rank-by-rank matrix L^T L
    core = lower.T @ lower
    chol = np.linalg.cholesky(core)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(rank)
    v /= np.linalg.norm(v)
    scale = np.linalg.norm(core, ord=np.inf)
    lam = np.inf
    for _ in range(max_iter):
        y = np.linalg.solve(chol.T, np.linalg.solve(chol, v))
        v = y / np.linalg.norm(y)
        cv = core @ v
        lam_new = float(v @ cv)
        res = float(np.linalg.norm(cv - lam_new * v))
        # residual bound plus Rayleigh-quotient stagnation
        if res <= max(tol * lam_new, 64 * np.finfo(float).eps * scale) or (
            abs(lam_new - lam) <= tol * lam_new and res <= np.sqrt(tol) * lam_new
        ):
            lam = lam_new
            break
        lam = lam_new
    else:
        raise SpectralError(f"inverse iteration did not converge in {max_iter} steps")
    if not 0.0 < lam <= fro * (1 + 1e-12):
        raise SpectralError(f"sigma_min_sq={lam} outside (0, fro_norm_sq]")
    return SpectralStats(fro_norm_sq=fro, sigma_min_sq=min(lam, fro), rank_estimate=rank)
