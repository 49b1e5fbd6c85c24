"""Test problems: random generators, the two-equation fixtures, Matrix Market I/O.

Random matrices come from numpy's Philox counter-based bit generator, so a
given seed produces the same matrix on every platform.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import DENSE_WORK_LIMIT, RowMatrix, _readonly, validate

FAMILIES = ("uniform-dense", "uniform-interval", "sparse-uniform")
CONSISTENCY_RTOL = 1e-10


class InconsistentSystemError(ValueError):
    pass


@dataclass
class Problem:
    """A consistent system ``mat @ x = b`` with an optional known solution.

    When ``x_true`` is given, consistency is certified on construction.
    """

    mat: RowMatrix
    b: np.ndarray
    x_true: np.ndarray = None
    provenance: str = "generated"
    seed: int = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if b.shape != (self.mat.m,):
            raise ValueError(f"b has shape {b.shape}, expected ({self.mat.m},)")
        self.b = _readonly(b.copy())
        if self.x_true is not None:
            xt = np.asarray(self.x_true, dtype=np.float64)
            if xt.shape != (self.mat.n,):
                raise ValueError(f"x_true has shape {xt.shape}, expected ({self.mat.n},)")
            self.x_true = _readonly(xt.copy())
            gap = np.linalg.norm(self.mat.matvec(self.x_true) - self.b)
            bound = CONSISTENCY_RTOL * np.sqrt(self.mat.fro_norm_sq) * np.linalg.norm(self.x_true)
            if gap > bound:
                raise InconsistentSystemError(
                    f"|A x_true - b| = {gap:.3e} exceeds certificate bound {bound:.3e}")

    @property
    def shape(self):
        return self.mat.shape


@dataclass(frozen=True)
class GeneratorSpec:
    """Random consistent problem recipe.

    ``uniform-dense`` is the [0, 1] family (``c`` forced to 0),
    ``uniform-interval`` draws entries on [c, 1], ``sparse-uniform`` keeps a
    ``density`` fraction of entries, each uniform on [c, 1].
    """

    family: str = "uniform-dense"
    m: int = 100
    n: int = 20
    c: float = 0.0
    density: float = 1.0
    seed: int = 0

    def check(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if not 0.0 <= self.c < 1.0:
            raise ValueError(f"c must lie in [0, 1), got {self.c}")
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")
        if self.family == "uniform-dense" and self.c != 0.0:
            raise ValueError("uniform-dense is the [0, 1] family; use uniform-interval for c > 0")


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed) & ((1 << 64) - 1)))


def generate(spec):
    """Build the problem described by ``spec`` with ``b = A @ ones``."""
    spec.check()
    rng = _rng(spec.seed)
    lo = spec.c
    resamples = 0
    if spec.family in ("uniform-dense", "uniform-interval"):
        a = lo + (1.0 - lo) * rng.random((spec.m, spec.n))
        while True:
            zero = np.flatnonzero(~np.any(a != 0.0, axis=1))
            if zero.size == 0:
                break
            resamples += zero.size
            a[zero] = lo + (1.0 - lo) * rng.random((zero.size, spec.n))
        mat = RowMatrix.from_dense(a)
    else:
        rows = []
        for _ in range(spec.m):
            rows.append(_sparse_row(rng, spec.n, spec.density, lo))
        for i, (cols, vals) in enumerate(rows):
            while not np.any(vals != 0.0):
                resamples += 1
                cols, vals = _sparse_row(rng, spec.n, spec.density, lo, at_least_one=True)
            rows[i] = (cols, vals)
        counts = np.array([len(c) for c, _ in rows], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        indices = np.concatenate([c for c, _ in rows])
        data = np.concatenate([v for _, v in rows])
        mat = RowMatrix.from_csr(indptr, indices, data, (spec.m, spec.n))
    ones = np.ones(spec.n)
    return Problem(mat=mat, b=mat.matvec(ones), x_true=ones, provenance="generated",
                   seed=spec.seed, name=f"{spec.family}-{spec.m}x{spec.n}",
                   meta={"spec": spec, "resamples": resamples})


def _sparse_row(rng, n, density, lo, at_least_one=False):
    k = int(rng.binomial(n, density))
    if at_least_one:
        k = max(k, 1)
    cols = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
    vals = lo + (1.0 - lo) * rng.random(k)
    keep = vals != 0.0
    return cols[keep], vals[keep]


_EXAMPLE_SYSTEMS = {
    1: (np.array([[7.0, -8.0], [8.0, -7.0]]), np.array([-1.0, 1.0])),
    2: (np.array([[7.0, 8.0], [140.0, 159.0]]), np.array([15.0, 299.0])),
}


def two_row_fixture(which):
    """The two 2x2 systems with solution (1, 1); ``which=2`` has nearly parallel rows."""
    if which not in _EXAMPLE_SYSTEMS:
        raise ValueError(f"which must be 1 or 2, got {which!r}")
    a, b = _EXAMPLE_SYSTEMS[which]
    return Problem(mat=RowMatrix.from_dense(a), b=b, x_true=np.ones(2),
                   provenance="fixture", name=f"two-row-{which}")


# --- Matrix Market -------------------------------------------------------

class MatrixMarketError(ValueError):
    pass


def _read_header(path):
    with open(path, "r") as fh:
        first = fh.readline()
    parts = first.strip().split()
    if len(parts) != 5 or parts[0].lower() != "%%matrixmarket" or parts[1].lower() != "matrix":
        raise MatrixMarketError(f"{path}: malformed Matrix Market header {first.strip()!r}")
    fmt, fld, sym = (p.lower() for p in parts[2:])
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"{path}: unknown format {fmt!r}")
    if fld == "pattern":
        raise MatrixMarketError(f"{path}: pattern matrices carry no values")
    if fld == "complex":
        raise MatrixMarketError(f"{path}: complex matrices are not supported")
    if fld not in ("real", "double"):
        raise MatrixMarketError(f"{path}: unsupported field {fld!r}")
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"{path}: unsupported symmetry {sym!r}")
    return fmt, fld, sym


def read_matrix_market(path):
    """Read a real general/symmetric Matrix Market file into a :class:`RowMatrix`."""
    import scipy.io
    import scipy.sparse as sps

    path = Path(path)
    _read_header(path)
    try:
        raw = scipy.io.mmread(str(path))
    except (ValueError, OSError, IndexError) as exc:
        raise MatrixMarketError(f"{path}: {exc}") from exc
    if sps.issparse(raw):
        csr = sps.csr_matrix(raw, dtype=np.float64)
    else:
        csr = sps.csr_matrix(np.asarray(raw, dtype=np.float64))
    csr.eliminate_zeros()
    return RowMatrix.from_scipy(csr)


def write_matrix_market(path, mat, comment=""):
    """Write ``mat`` as ``coordinate real general`` with round-trip precision."""
    rows = np.repeat(np.arange(mat.m), np.diff(mat.indptr)) if mat.sparse else None
    if mat.sparse:
        cols, vals = mat.indices, mat.data
    else:
        rows, cols = np.nonzero(mat.dense)
        vals = mat.dense[rows, cols]
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        for line in comment.splitlines():
            fh.write(f"% {line}\n")
        fh.write(f"{mat.m} {mat.n} {len(vals)}\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")


def write_vector(path, v, comment=""):
    """Dense vector as an ``array real general`` n-by-1 file."""
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        for line in comment.splitlines():
            fh.write(f"% {line}\n")
        fh.write(f"{len(v)} 1\n")
        for val in v:
            fh.write(f"{float(val)!r}\n")


def read_vector(path):
    mat = read_matrix_market(path)
    if mat.n != 1:
        raise MatrixMarketError(f"{path}: expected a single column, got {mat.n}")
    return mat.to_dense()[:, 0]


def sidecar_paths(path):
    path = Path(path)
    stem = path.with_suffix("")
    return Path(f"{stem}_b.mtx"), Path(f"{stem}_x.mtx")


def load_matrix_market(path, rhs_mode="all-ones"):
    """Load a problem from a Matrix Market file.

    ``rhs_mode="all-ones"`` synthesizes ``b = A @ ones`` with that known
    solution; ``"from-file"`` reads ``<stem>_b.mtx`` and, when present,
    ``<stem>_x.mtx``.
    """
    mat = read_matrix_market(path)
    if rhs_mode == "all-ones":
        ones = np.ones(mat.n)
        return Problem(mat=mat, b=mat.matvec(ones), x_true=ones, provenance="file",
                       name=Path(path).stem)
    if rhs_mode == "from-file":
        b_path, x_path = sidecar_paths(path)
        b = read_vector(b_path)
        x_true = read_vector(x_path) if x_path.exists() else None
        return Problem(mat=mat, b=b, x_true=x_true, provenance="file", name=Path(path).stem)
    raise ValueError(f"rhs_mode must be 'all-ones' or 'from-file', got {rhs_mode!r}")


def save_problem(stem, problem):
    """Write ``<stem>.mtx`` plus ``_b``/``_x`` sidecars. Returns the paths written."""
    stem = Path(stem)
    if stem.suffix == ".mtx":
        stem = stem.with_suffix("")
    mat_path = Path(f"{stem}.mtx")
    b_path, x_path = sidecar_paths(mat_path)
    write_matrix_market(mat_path, problem.mat, comment=problem.name)
    write_vector(b_path, problem.b, comment="right-hand side")
    paths = [mat_path, b_path]
    if problem.x_true is not None:
        write_vector(x_path, problem.x_true, comment="known solution")
        paths.append(x_path)
    return paths


# --- least-norm oracle ---------------------------------------------------

def least_norm_oracle(problem, rank_rtol=1e-10):
    """Minimum-norm solution of a small consistent system.

    Solves the normal equations inside the range of ``A^T`` spanned by the
    Gram eigenvectors with nonzero eigenvalues, then certifies both
    ``A x = b`` and that ``x`` has no component in the null space.
    """
    mat = problem.mat
    if mat.m * mat.n > DENSE_WORK_LIMIT:
        raise ValueError("least_norm_oracle is restricted to m*n <= 1e6")
    if not validate(mat).valid:
        raise ValueError("matrix has zero or non-finite rows")
    a = mat.to_dense()
    b = np.asarray(problem.b)
    evals, evecs = np.linalg.eigh(a.T @ a)
    keep = evals > rank_rtol * max(evals[-1], 0.0)
    basis = evecs[:, keep]
    null = evecs[:, ~keep]
    x = basis @ ((basis.T @ (a.T @ b)) / evals[keep])
    gap = np.linalg.norm(a @ x - b)
    if gap > 1e-8 * (np.linalg.norm(a) * np.linalg.norm(x) + np.linalg.norm(b)):
        raise InconsistentSystemError(f"system is inconsistent: |Ax - b| = {gap:.3e}")
    if null.size and np.linalg.norm(null.T @ x) > 1e-8 * max(np.linalg.norm(x), 1.0):
        raise ValueError("least-norm certificate failed: solution leaks into null(A)")
    return x
