"""Kaczmarz-type solvers: K, RK, KO, RKO and the greedy MR/MD baselines.

One stepping engine covers all of them; a solver is a row-selection
strategy paired with a projection kind (orthogonal or oblique).  Iteration
counts include the initial projection: ``iterations`` is the number of
projection updates applied.
"""
import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .linalg import ZERO_ROW_THRESHOLD, RowMatrix, _readonly, validate

SELECTIONS = {
    "cyclic": K.CYCLIC,
    "uniform-random": K.UNIFORM,
    "norm-proportional": K.NORM_PROPORTIONAL,
    "max-residual": K.MAX_RESIDUAL,
    "max-distance": K.MAX_DISTANCE,
}
PROJECTIONS = ("orthogonal", "oblique")
STOP_RULES = {"rse": K.STOP_RSE, "error": K.STOP_ERROR, "residual": K.STOP_RESIDUAL, "cap": K.STOP_CAP}
MODES = {"online": "online", "preprocessing": "preprocessing", "preprocess": "preprocessing"}

PRESETS = {
    "k": ("cyclic", "orthogonal"),
    "rk": ("uniform-random", "orthogonal"),
    "ko": ("cyclic", "oblique"),
    "rko": ("uniform-random", "oblique"),
    "mr": ("max-residual", "orthogonal"),
    "md": ("max-distance", "orthogonal"),
}

REASONS = {K.CONVERGED: "converged", K.ITERATION_CAP: "iteration-cap", K.STAGNATION: "stagnation"}
KINDS = {
    K.KIND_ORTHOGONAL: "orthogonal",
    K.KIND_OBLIQUE: "oblique",
    K.KIND_SKIPPED: "skipped-degenerate",
    K.KIND_FALLBACK: "orthogonal",
}


class SolverRefusal(ValueError):
    """The solver declines to run on this input (zero rows, m <= 2 for RKO, ...)."""


def derive_seed(*parts):
    """Stable 64-bit seed from arbitrary parts, e.g. ``(base, solver, trial)``."""
    text = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SolverConfig:
    selection: str = "cyclic"
    projection: str = "orthogonal"
    max_iters: int = 100_000
    stop: str = "rse"
    rse_tol: float = 0.5e-6
    error_tol: float = 0.5e-6
    residual_tol: float = 1e-8
    residual_interval: int = None  # defaults to m (one check per sweep)
    epsilon_rel: float = 1e-12
    degenerate: str = "fallback"
    mode: str = "online"
    rng_seed: int = 0
    history_stride: int = 1
    stall_window: int = 1000
    name: str = ""

    @classmethod
    def preset(cls, solver, **kwargs):
        """Config for one of ``k, rk, ko, rko, mr, md``."""
        key = solver.lower()
        if key not in PRESETS:
            raise ValueError(f"unknown solver {solver!r}; expected one of {sorted(PRESETS)}")
        selection, projection = PRESETS[key]
        kwargs.setdefault("name", key)
        return cls(selection=selection, projection=projection, **kwargs)

    @property
    def label(self):
        if self.name:
            return self.name
        for key, pair in PRESETS.items():
            if pair == (self.selection, self.projection):
                return key
        return f"{self.selection}/{self.projection}"

    @property
    def oblique(self):
        return self.projection == "oblique"

    @property
    def tolerance(self):
        return {"rse": self.rse_tol, "error": self.error_tol,
                "residual": self.residual_tol, "cap": 0.0}[self.stop]

    def check(self, m=None):
        if self.selection not in SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}")
        if self.projection not in PROJECTIONS:
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.stop not in STOP_RULES:
            raise ValueError(f"unknown stop rule {self.stop!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.degenerate not in ("fallback", "skip"):
            raise ValueError(f"degenerate must be 'fallback' or 'skip', got {self.degenerate!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.stop != "cap" and not self.tolerance > 0:
            raise ValueError("stop tolerance must be > 0")
        if not self.epsilon_rel > 0:
            raise ValueError("epsilon_rel must be > 0")
        if self.history_stride < 1 or self.stall_window < 1:
            raise ValueError("history_stride and stall_window must be >= 1")
        if MODES[self.mode] == "preprocessing" and (self.selection, self.projection) != ("cyclic", "oblique"):
            raise ValueError("preprocessing mode applies to cyclic oblique (KO) only")
        if m is not None and self.oblique and self.selection == "uniform-random" and m <= 2:
            raise SolverRefusal(f"randomized oblique selection needs m > 2, got m={m}")


@dataclass
class SolverState:
    x: np.ndarray
    k: int = 0
    last_index: int = None
    prev_index: int = None


@dataclass
class CounterRNG:
    """Counter-based SplitMix64 stream; draw ``t`` depends only on (seed, t)."""

    seed: int
    draws: int = 0

    def uniform(self):
        u = K.uniform(np.uint64(self.seed & K._MASK64), self.draws)
        self.draws += 1
        return float(u)


@dataclass
class ObliqueGeometry:
    D: float
    w: np.ndarray
    h: float
    M_next: float
    r: float = None
    alpha: float = None

    @property
    def sin2_theta(self):
        return self.h / self.M_next


@dataclass
class StepRecord:
    k: int
    index: int
    kind: str
    prev_index: int = None
    degenerate: bool = False
    geometry: ObliqueGeometry = None
    r: float = 0.0
    alpha: float = 0.0
    error_sq_before: float = None
    error_sq_after: float = None
    x: np.ndarray = None
    plane_residuals: tuple = ()


@dataclass
class RunReport:
    solver: str
    reason: str
    iterations: int
    x: np.ndarray
    history: np.ndarray
    history_stride: int
    wall_time: float
    n_oblique: int = 0
    n_degenerate: int = 0
    rse: float = None
    residual: float = None
    seed: int = 0
    records: list = field(default=None, repr=False)

    @property
    def converged(self):
        return self.reason == "converged"


# --- per-step operations ----------------------------------------------------

_NO_PRE = (False, np.zeros(0), np.zeros(0), np.zeros(0),
           np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
           np.zeros(0, dtype=np.int64), np.zeros(0))


def _vec(v):
    v = np.asarray(v, dtype=np.float64)
    if v.flags.writeable or not v.flags.c_contiguous:
        v = _readonly(v.copy())
    return v


def _check_row(mat, i):
    if not 0 <= i < mat.m:
        raise IndexError(f"row {i} out of range for {mat.m} rows")
    if not mat.row_norms_sq[i] >= ZERO_ROW_THRESHOLD:
        raise SolverRefusal(f"row {i} is a zero row")


def orthogonal_step(state, mat, b, i):
    """Project ``state.x`` orthogonally onto hyperplane ``i``."""
    _check_row(mat, i)
    x = np.array(state.x, dtype=np.float64)
    K.orth_update(mat.kernel_mat, _vec(b), i, x)
    return SolverState(x=x, k=state.k + 1, last_index=i, prev_index=state.last_index)


def oblique_direction(mat, i_prev, i_next):
    """Direction orthogonal to row ``i_prev`` that moves toward hyperplane ``i_next``.

    ``h`` uses ``M(next) - D**2 / M(prev)`` rather than renorming ``w``.
    """
    _check_row(mat, i_prev)
    _check_row(mat, i_next)
    if i_prev == i_next:
        raise ValueError("oblique direction needs two distinct rows")
    norms = mat.row_norms_sq
    d = float(K.rows_dot(mat.kernel_mat, i_prev, i_next))
    coef = d / norms[i_prev]
    h = float(norms[i_next] - coef * d)
    w = mat.row(i_next) - coef * mat.row(i_prev)
    if __debug__:
        wn = float(w @ w)
        assert abs(wn - h) <= 1e-10 * norms[i_next] + 1e-300, (wn, h)
    return ObliqueGeometry(D=d, w=w, h=h, M_next=float(norms[i_next]))


def _plane_residual(mat, b, i, x):
    a_norm = np.sqrt(mat.row_norms_sq[i])
    scale = a_norm * np.linalg.norm(x) + abs(b[i])
    res = abs(b[i] - K.row_dot(mat.kernel_mat, i, x))
    return res / scale if scale > 0 else res


def _record(mat, b, x, k, i, last, kind, d, h, r, alpha, keep_x, err_before, err_after):
    norms = mat.row_norms_sq
    geometry = None
    if kind != K.KIND_ORTHOGONAL:
        coef = d / norms[last]
        geometry = ObliqueGeometry(D=d, w=mat.row(i) - coef * mat.row(last), h=h,
                                   M_next=float(norms[i]), r=r,
                                   alpha=alpha if kind == K.KIND_OBLIQUE else None)
    planes = ()
    if kind == K.KIND_OBLIQUE:
        planes = (_plane_residual(mat, b, last, x), _plane_residual(mat, b, i, x))
    elif kind in (K.KIND_ORTHOGONAL, K.KIND_FALLBACK):
        planes = (_plane_residual(mat, b, i, x),)
    return StepRecord(k=k, index=int(i), kind=KINDS[kind], prev_index=None if last < 0 else int(last),
                      degenerate=kind in (K.KIND_SKIPPED, K.KIND_FALLBACK), geometry=geometry,
                      r=float(r), alpha=float(alpha), error_sq_before=err_before,
                      error_sq_after=err_after, x=x.copy() if keep_x else None,
                      plane_residuals=planes)


def oblique_step(state, mat, b, i_next, config, x_true=None):
    """One oblique projection from the hyperplane of ``state.last_index`` onto ``i_next``.

    Degenerate pairs (``h <= epsilon_rel * M(i_next)``) fall back to an
    orthogonal projection, or leave ``x`` unchanged when
    ``config.degenerate == "skip"``.
    """
    if state.last_index is None:
        raise ValueError("oblique step needs a previous row; start with orthogonal_step")
    if i_next == state.last_index:
        raise ValueError("oblique step needs i_next != last_index")
    _check_row(mat, i_next)
    b = _vec(b)
    x = np.array(state.x, dtype=np.float64)
    err_before = None if x_true is None else float(np.dot(x - x_true, x - x_true))
    n = mat.n
    kind, d, h, r, alpha, _ = K.project(
        mat.kernel_mat, b, x, i_next, True, state.last_index, config.epsilon_rel,
        config.degenerate == "skip", _NO_PRE, np.empty(n, dtype=np.int64), np.empty(n))
    err_after = None if x_true is None else float(np.dot(x - x_true, x - x_true))
    rec = _record(mat, b, x, state.k + 1, i_next, state.last_index, kind, d, h, r, alpha,
                  True, err_before, err_after)
    new = SolverState(x=x, k=state.k + 1, last_index=i_next, prev_index=state.last_index)
    return new, rec


def select_next(strategy, state, mat, b, rng=None, oblique=False):
    """Next row index for ``strategy``.

    With ``oblique=True`` the uniform strategy excludes the last one or two
    rows used (the randomized oblique rule); otherwise it is uniform over all
    rows. Greedy strategies break ties by the lowest index.
    """
    code = SELECTIONS[strategy]
    if oblique and code == K.UNIFORM and mat.m <= 2:
        raise SolverRefusal(f"randomized oblique selection needs m > 2, got m={mat.m}")
    rng = rng if rng is not None else CounterRNG(0)
    last = -1 if state.last_index is None else state.last_index
    prev = -1 if state.prev_index is None else state.prev_index
    i, draws = K.select_row(code, oblique, last, prev, np.uint64(rng.seed & K._MASK64), rng.draws,
                            mat.cum_norms, mat.kernel_mat, _vec(b),
                            np.ascontiguousarray(state.x, dtype=np.float64), np.empty(mat.m))
    rng.draws = int(draws)
    return int(i)


# --- full runs ------------------------------------------------------------

@dataclass
class _Prepared:
    mat: RowMatrix
    b: np.ndarray
    x_true: np.ndarray
    xt_norm_sq: float
    pre: tuple
    seed: np.uint64
    residual_interval: int


def _prepare(problem, config):
    mat = problem.mat
    config.check(mat.m)
    report = validate(mat)
    if not report.valid:
        raise SolverRefusal(f"invalid matrix: zero rows {report.zero_rows[:5]}, "
                            f"non-finite rows {report.nonfinite_rows[:5]}")
    x_true = problem.x_true
    if config.stop in ("rse", "error") and x_true is None:
        raise ValueError(f"stop rule {config.stop!r} needs a known solution")
    xt_norm_sq = 1.0
    if x_true is not None:
        xt_norm_sq = float(np.dot(x_true, x_true))
        if config.stop == "rse" and xt_norm_sq == 0.0:
            raise ValueError("RSE is undefined for a zero solution")
    pre = _NO_PRE
    if MODES[config.mode] == "preprocessing":
        pre = (True,) + tuple(K.preprocess_cyclic(mat.kernel_mat, mat.m, mat.n))
    interval = config.residual_interval or mat.m
    return _Prepared(mat=mat, b=_vec(problem.b),
                     x_true=_vec(x_true) if x_true is not None else K_EMPTY,
                     xt_norm_sq=xt_norm_sq, pre=pre,
                     seed=np.uint64(config.rng_seed & K._MASK64), residual_interval=interval)


K_EMPTY = _readonly(np.zeros(0))


def _start(problem, x0):
    if x0 is None:
        return np.zeros(problem.mat.n)
    x = np.array(x0, dtype=np.float64)
    if x.shape != (problem.mat.n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({problem.mat.n},)")
    return x


def _finish(problem, x):
    b = problem.b
    nb = np.linalg.norm(b)
    res = float(np.linalg.norm(b - problem.mat.matvec(x)))
    res = res / nb if nb > 0 else res
    rse = None
    if problem.x_true is not None:
        xt = problem.x_true
        nt = float(np.dot(xt, xt))
        rse = float(np.dot(x - xt, x - xt) / nt) if nt > 0 else float(np.dot(x, x))
    return rse, res


def solve(problem, config, x0=None, keep_records=False):
    """Run one solver on ``problem`` until its stop rule fires.

    With ``keep_records`` the run goes through :func:`iterate_stream` and
    the per-step records are attached to the report; the iterates are the
    same either way.
    """
    if keep_records:
        stream = iterate_stream(problem, config, x0=x0)
        t0 = time.perf_counter()
        records = list(stream)
        wall = time.perf_counter() - t0
        x = stream.x
        rse, res = _finish(problem, x)
        return RunReport(solver=config.label, reason=stream.reason, iterations=stream.k, x=x,
                         history=np.asarray(stream.history), history_stride=config.history_stride,
                         wall_time=wall, n_oblique=stream.n_oblique,
                         n_degenerate=stream.n_degenerate, rse=rse, residual=res,
                         seed=config.rng_seed, records=records)

    prep = _prepare(problem, config)
    x = _start(problem, x0)
    hist = np.empty(config.max_iters // config.history_stride + 2)
    mat = prep.mat
    t0 = time.perf_counter()
    out = K.run(mat.kernel_mat, prep.b, mat.cum_norms, x, prep.x_true,
                problem.x_true is not None, prep.xt_norm_sq, SELECTIONS[config.selection],
                config.oblique, config.max_iters, STOP_RULES[config.stop], config.tolerance,
                config.epsilon_rel, config.degenerate == "skip", prep.seed, prep.pre, hist,
                config.history_stride, prep.residual_interval, config.stall_window)
    wall = time.perf_counter() - t0
    k, reason, n_obl, n_deg, n_hist = (int(v) for v in out[:5])
    rse, res = _finish(problem, x)
    return RunReport(solver=config.label, reason=REASONS[reason], iterations=k, x=x,
                     history=hist[:n_hist].copy(), history_stride=config.history_stride,
                     wall_time=wall, n_oblique=n_obl, n_degenerate=n_deg, rse=rse,
                     residual=res, seed=config.rng_seed)


class iterate_stream:
    """Lazy per-step view of the run :func:`solve` would perform.

    Iterating yields one :class:`StepRecord` per projection update. After
    exhaustion ``reason``, ``k``, ``x`` and ``history`` describe the run.
    ``keep_iterates=False`` drops the per-step copy of ``x``.
    """

    def __init__(self, problem, config, x0=None, keep_iterates=True):
        self.problem = problem
        self.config = config
        self._prep = _prepare(problem, config)
        self.x = _start(problem, x0)
        self.keep_iterates = keep_iterates
        self.reason = None
        self.k = 0
        self.n_oblique = 0
        self.n_degenerate = 0
        self.history = []
        self.last_index = None
        self.prev_index = None
        self.draws = 0

    def state(self):
        return SolverState(x=self.x.copy(), k=self.k, last_index=self.last_index,
                           prev_index=self.prev_index)

    def _converged(self, err_sq, resid, b_norm):
        cfg = self.config
        if cfg.stop == "rse":
            return err_sq / self._prep.xt_norm_sq < cfg.rse_tol
        if cfg.stop == "error":
            return np.sqrt(err_sq) <= cfg.error_tol
        if cfg.stop == "residual" and self.k % self._prep.residual_interval == 0:
            K.full_residual(self._prep.mat.kernel_mat, self._prep.b, self.x, resid)
            return np.sqrt(K.seq_sum(resid * resid)) <= cfg.residual_tol * b_norm
        return False

    def __iter__(self):
        cfg = self.config
        prep = self._prep
        mat = prep.mat
        kmat = mat.kernel_mat
        has_true = self.problem.x_true is not None
        x = self.x
        n, m = mat.n, mat.m
        w_idx = np.empty(n, dtype=np.int64)
        w_val = np.empty(n)
        resid = np.empty(m)
        b_norm = np.sqrt(K.seq_sum(prep.b * prep.b))
        selection = SELECTIONS[cfg.selection]
        skip = cfg.degenerate == "skip"
        last, prev, ctr, stall = -1, -1, 0, 0

        err_sq, _ = K.err_and_norm(x, prep.x_true, has_true)
        if has_true:
            self.history.append(err_sq / prep.xt_norm_sq)
        if self._converged(err_sq, resid, b_norm):
            self.reason = "converged"
            return
        while self.k < cfg.max_iters:
            err_before = err_sq if has_true else None
            i, kind, ctr, d, h, r, alpha, step_sq = K.advance(
                kmat, prep.b, mat.cum_norms, x, selection, cfg.oblique, last, prev, prep.seed,
                ctr, cfg.epsilon_rel, skip, prep.pre, w_idx, w_val, resid)
            self.k += 1
            self.draws = int(ctr)
            if kind == K.KIND_OBLIQUE:
                self.n_oblique += 1
            elif kind != K.KIND_ORTHOGONAL:
                self.n_degenerate += 1
            err_sq, xn_sq = K.err_and_norm(x, prep.x_true, has_true)
            rec = _record(mat, prep.b, x, self.k, i, last, kind, d, h, r, alpha,
                          self.keep_iterates, err_before, err_sq if has_true else None)
            prev, last = last, int(i)
            self.prev_index = None if prev < 0 else prev
            self.last_index = last
            done = self._converged(err_sq, resid, b_norm)
            if has_true and (self.k % cfg.history_stride == 0 or done):
                self.history.append(err_sq / prep.xt_norm_sq)
            yield rec
            if done:
                self.reason = "converged"
                return
            if step_sq <= K.STALL_RATIO_SQ * xn_sq:
                stall += 1
                if stall >= cfg.stall_window:
                    self.reason = "stagnation"
                    return
            else:
                stall = 0
        self.reason = "iteration-cap"


def with_seed(config, seed):
    return replace(config, rng_seed=int(seed))
