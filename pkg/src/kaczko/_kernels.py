"""Hot loops for the row-action solvers.

The low-level row primitives are defined twice: explicit sequential loops
compiled with numba, and vectorized numpy equivalents used when the numba
backend is switched off (see ``_accel``).  Everything above the primitives
(row selection, one solver step, the full run loop) is written once and
goes through ``jit``.

A matrix travels through the kernels as the tuple
``(dense, indptr, indices, data, sparse, norms)``; the unused storage is an
empty placeholder array.
"""
import numpy as np

from ._accel import NUMBA_ENABLED, jit

# row selection strategies
CYCLIC = 0
UNIFORM = 1
NORM_PROPORTIONAL = 2
MAX_RESIDUAL = 3
MAX_DISTANCE = 4

# step kinds
KIND_ORTHOGONAL = 0
KIND_OBLIQUE = 1
KIND_SKIPPED = 2
KIND_FALLBACK = 3  # degenerate oblique step replaced by an orthogonal one

# stop rules
STOP_CAP = 0
STOP_RSE = 1
STOP_ERROR = 2
STOP_RESIDUAL = 3

# termination reasons
CONVERGED = 0
ITERATION_CAP = 1
STAGNATION = 2

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_M53 = 2.0 ** -53

STALL_RATIO_SQ = 1e-32  # |dx| <= 1e-16 |x|


if NUMBA_ENABLED:
    _U_GAMMA = np.uint64(_GAMMA)
    _U_MIX1 = np.uint64(_MIX1)
    _U_MIX2 = np.uint64(_MIX2)
    _S11 = np.uint64(11)
    _S27 = np.uint64(27)
    _S30 = np.uint64(30)
    _S31 = np.uint64(31)

    @jit
    def uniform(seed, ctr):
        z = seed + np.uint64(ctr + 1) * _U_GAMMA
        z = (z ^ (z >> _S30)) * _U_MIX1
        z = (z ^ (z >> _S27)) * _U_MIX2
        z = z ^ (z >> _S31)
        return float(z >> _S11) * _TWO_M53

    @jit
    def row_dot(mat, i, x):
        dense, indptr, indices, data, sparse, norms = mat
        s = 0.0
        if sparse:
            for p in range(indptr[i], indptr[i + 1]):
                s += data[p] * x[indices[p]]
        else:
            for j in range(dense.shape[1]):
                s += dense[i, j] * x[j]
        return s

    @jit
    def row_axpy(mat, i, alpha, x):
        dense, indptr, indices, data, sparse, norms = mat
        if sparse:
            for p in range(indptr[i], indptr[i + 1]):
                x[indices[p]] += alpha * data[p]
        else:
            for j in range(dense.shape[1]):
                x[j] += alpha * dense[i, j]

    @jit
    def rows_dot(mat, i, j):
        dense, indptr, indices, data, sparse, norms = mat
        s = 0.0
        if sparse:
            p = indptr[i]
            pe = indptr[i + 1]
            q = indptr[j]
            qe = indptr[j + 1]
            while p < pe and q < qe:
                if indices[p] == indices[q]:
                    s += data[p] * data[q]
                    p += 1
                    q += 1
                elif indices[p] < indices[q]:
                    p += 1
                else:
                    q += 1
        else:
            for c in range(dense.shape[1]):
                s += dense[i, c] * dense[j, c]
        return s

    @jit
    def form_w(mat, i_prev, i_next, coef, w_idx, w_val):
        dense, indptr, indices, data, sparse, norms = mat
        if not sparse:
            n = dense.shape[1]
            for c in range(n):
                w_val[c] = dense[i_next, c] - coef * dense[i_prev, c]
            return n
        p = indptr[i_next]
        pe = indptr[i_next + 1]
        q = indptr[i_prev]
        qe = indptr[i_prev + 1]
        t = 0
        while p < pe or q < qe:
            if q >= qe or (p < pe and indices[p] < indices[q]):
                w_idx[t] = indices[p]
                w_val[t] = data[p]
                p += 1
            elif p >= pe or indices[q] < indices[p]:
                w_idx[t] = indices[q]
                w_val[t] = 0.0 - coef * data[q]
                q += 1
            else:
                w_idx[t] = indices[p]
                w_val[t] = data[p] - coef * data[q]
                p += 1
                q += 1
            t += 1
        return t

    @jit
    def apply_w(sparse, w_idx, w_val, start, nnz, alpha, x):
        if sparse:
            for t in range(start, start + nnz):
                x[w_idx[t]] += alpha * w_val[t]
        else:
            for t in range(nnz):
                x[t] += alpha * w_val[start + t]

    @jit
    def full_residual(mat, b, x, out):
        for i in range(b.shape[0]):
            out[i] = b[i] - row_dot(mat, i, x)

    @jit
    def argmax_abs(resid, norms, scaled):
        best = -1.0
        arg = 0
        for i in range(resid.shape[0]):
            v = abs(resid[i])
            if scaled:
                v = v / np.sqrt(norms[i])
            if v > best:
                best = v
                arg = i
        return arg

    @jit
    def err_and_norm(x, x_true, has_true):
        e = 0.0
        s = 0.0
        for j in range(x.shape[0]):
            s += x[j] * x[j]
            if has_true:
                d = x[j] - x_true[j]
                e += d * d
        return e, s

    @jit
    def row_norms_sq(mat, m):
        dense, indptr, indices, data, sparse, norms = mat
        out = np.empty(m)
        for i in range(m):
            s = 0.0
            if sparse:
                for p in range(indptr[i], indptr[i + 1]):
                    s += data[p] * data[p]
            else:
                for j in range(dense.shape[1]):
                    s += dense[i, j] * dense[i, j]
            out[i] = s
        return out

    @jit
    def seq_sum(v):
        s = 0.0
        for i in range(v.shape[0]):
            s += v[i]
        return s

else:

    def uniform(seed, ctr):
        z = (int(seed) + (ctr + 1) * _GAMMA) & _MASK64
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        z ^= z >> 31
        return (z >> 11) * _TWO_M53

    def row_dot(mat, i, x):
        dense, indptr, indices, data, sparse, norms = mat
        if sparse:
            s, e = indptr[i], indptr[i + 1]
            return float(np.dot(data[s:e], x[indices[s:e]]))
        return float(np.dot(dense[i], x))

    def row_axpy(mat, i, alpha, x):
        dense, indptr, indices, data, sparse, norms = mat
        if sparse:
            s, e = indptr[i], indptr[i + 1]
            x[indices[s:e]] += alpha * data[s:e]
        else:
            x += alpha * dense[i]

    def rows_dot(mat, i, j):
        dense, indptr, indices, data, sparse, norms = mat
        if sparse:
            si, ei = indptr[i], indptr[i + 1]
            sj, ej = indptr[j], indptr[j + 1]
            _, pi, pj = np.intersect1d(indices[si:ei], indices[sj:ej],
                                       assume_unique=True, return_indices=True)
            return float(np.dot(data[si:ei][pi], data[sj:ej][pj]))
        return float(np.dot(dense[i], dense[j]))

    def form_w(mat, i_prev, i_next, coef, w_idx, w_val):
        dense, indptr, indices, data, sparse, norms = mat
        if not sparse:
            n = dense.shape[1]
            w_val[:n] = dense[i_next] - coef * dense[i_prev]
            return n
        sn, en = indptr[i_next], indptr[i_next + 1]
        sp, ep = indptr[i_prev], indptr[i_prev + 1]
        union = np.union1d(indices[sn:en], indices[sp:ep])
        t = union.shape[0]
        vals = np.zeros(t)
        vals[np.searchsorted(union, indices[sn:en])] += data[sn:en]
        vals[np.searchsorted(union, indices[sp:ep])] -= coef * data[sp:ep]
        w_idx[:t] = union
        w_val[:t] = vals
        return t

    def apply_w(sparse, w_idx, w_val, start, nnz, alpha, x):
        if sparse:
            x[w_idx[start:start + nnz]] += alpha * w_val[start:start + nnz]
        else:
            x += alpha * w_val[start:start + nnz]

    def full_residual(mat, b, x, out):
        dense, indptr, indices, data, sparse, norms = mat
        if sparse:
            rows = np.repeat(np.arange(b.shape[0]), np.diff(indptr))
            out[:] = b - np.bincount(rows, weights=data * x[indices], minlength=b.shape[0])
        else:
            out[:] = b - dense @ x

    def argmax_abs(resid, norms, scaled):
        v = np.abs(resid)
        if scaled:
            v = v / np.sqrt(norms)
        return int(np.argmax(v))

    def err_and_norm(x, x_true, has_true):
        s = float(np.dot(x, x))
        if has_true:
            d = x - x_true
            return float(np.dot(d, d)), s
        return 0.0, s

    def row_norms_sq(mat, m):
        dense, indptr, indices, data, sparse, norms = mat
        with np.errstate(over="ignore"):  # match the compiled path: overflow -> inf, no warning
            if sparse:
                rows = np.repeat(np.arange(m), np.diff(indptr))
                return np.bincount(rows, weights=data * data, minlength=m)
            return np.einsum("ij,ij->i", dense, dense)

    def seq_sum(v):
        return float(np.sum(v))


@jit
def select_row(selection, oblique, last, prev, seed, ctr, cum_norms, mat, b, x, resid):
    """Pick the next row. Returns ``(row, draws_used_so_far)``."""
    m = b.shape[0]
    if selection == CYCLIC:
        if last < 0:
            return 0, ctr
        return (last + 1) % m, ctr
    if selection == UNIFORM:
        u = uniform(seed, ctr)
        ctr += 1
        if not oblique or last < 0:
            return min(int(u * m), m - 1), ctr
        if prev < 0:
            j = min(int(u * (m - 1)), m - 2)
            if j >= last:
                j += 1
            return j, ctr
        lo = min(last, prev)
        hi = max(last, prev)
        j = min(int(u * (m - 2)), m - 3)
        if j >= lo:
            j += 1
        if j >= hi:
            j += 1
        return j, ctr
    if selection == NORM_PROPORTIONAL:
        u = uniform(seed, ctr)
        ctr += 1
        j = np.searchsorted(cum_norms, u * cum_norms[m - 1], side="right")
        return min(int(j), m - 1), ctr
    full_residual(mat, b, x, resid)
    return argmax_abs(resid, mat[5], selection == MAX_DISTANCE), ctr


@jit
def orth_update(mat, b, i, x):
    r = b[i] - row_dot(mat, i, x)
    alpha = r / mat[5][i]
    row_axpy(mat, i, alpha, x)
    return r, alpha


@jit
def project(mat, b, x, i, oblique, last, eps_rel, skip_degenerate, pre, w_idx, w_val):
    """Project ``x`` in place onto hyperplane ``i``.

    Oblique when requested and a previous row exists, orthogonal otherwise.
    Returns ``(kind, D, h, r, alpha, step_sq)``.
    """
    norms = mat[5]
    sparse = mat[4]
    if not oblique or last < 0:
        r, alpha = orth_update(mat, b, i, x)
        return KIND_ORTHOGONAL, 0.0, 0.0, r, alpha, alpha * alpha * norms[i]
    pre_on, pre_d, pre_coef, pre_h, pre_start, pre_len, pre_idx, pre_val = pre
    if pre_on:
        d = pre_d[last]
        coef = pre_coef[last]
        h = pre_h[last]
    else:
        d = rows_dot(mat, last, i)
        coef = d / norms[last]
        h = norms[i] - coef * d
    if h > eps_rel * norms[i]:
        if pre_on:
            r = b[i] - row_dot(mat, i, x)
            alpha = r / h
            apply_w(sparse, pre_idx, pre_val, pre_start[last], pre_len[last], alpha, x)
        else:
            nnz = form_w(mat, last, i, coef, w_idx, w_val)
            r = b[i] - row_dot(mat, i, x)
            alpha = r / h
            apply_w(sparse, w_idx, w_val, 0, nnz, alpha, x)
        return KIND_OBLIQUE, d, h, r, alpha, alpha * alpha * h
    if skip_degenerate:
        r = b[i] - row_dot(mat, i, x)
        return KIND_SKIPPED, d, h, r, 0.0, 0.0
    r, alpha = orth_update(mat, b, i, x)
    return KIND_FALLBACK, d, h, r, alpha, alpha * alpha * norms[i]


@jit
def advance(mat, b, cum_norms, x, selection, oblique, last, prev, seed, ctr,
            eps_rel, skip_degenerate, pre, w_idx, w_val, resid):
    """Select a row and project onto it, in place on ``x``.

    Returns ``(row, kind, draws, D, h, r, alpha, step_sq)``.
    """
    i, ctr = select_row(selection, oblique, last, prev, seed, ctr, cum_norms, mat, b, x, resid)
    kind, d, h, r, alpha, step_sq = project(mat, b, x, i, oblique, last, eps_rel,
                                            skip_degenerate, pre, w_idx, w_val)
    return i, kind, ctr, d, h, r, alpha, step_sq


@jit
def preprocess_cyclic(mat, m, n):
    """Oblique geometry for every cyclic pair (i, i+1 mod m)."""
    norms = mat[5]
    pre_d = np.empty(m)
    pre_coef = np.empty(m)
    pre_h = np.empty(m)
    pre_start = np.empty(m, dtype=np.int64)
    pre_len = np.empty(m, dtype=np.int64)
    w_idx = np.empty(n, dtype=np.int64)
    w_val = np.empty(n)
    idx = np.empty(m * n, dtype=np.int64)
    val = np.empty(m * n)
    pos = 0
    for i in range(m):
        j = (i + 1) % m
        d = rows_dot(mat, i, j)
        coef = d / norms[i]
        pre_d[i] = d
        pre_coef[i] = coef
        pre_h[i] = norms[j] - coef * d
        nnz = form_w(mat, i, j, coef, w_idx, w_val)
        pre_start[i] = pos
        pre_len[i] = nnz
        idx[pos:pos + nnz] = w_idx[:nnz]
        val[pos:pos + nnz] = w_val[:nnz]
        pos += nnz
    return pre_d, pre_coef, pre_h, pre_start, pre_len, idx[:pos].copy(), val[:pos].copy()


@jit
def run(mat, b, cum_norms, x, x_true, has_true, xt_norm_sq, selection, oblique,
        max_iters, stop_kind, tol, eps_rel, skip_degenerate, seed, pre, hist,
        hist_stride, residual_interval, stall_window):
    """Full solver loop in place on ``x``.

    Returns ``(iterations, reason, n_oblique, n_degenerate, n_hist, draws,
    last, prev)``.
    """
    m = b.shape[0]
    n = x.shape[0]
    w_idx = np.empty(n, dtype=np.int64)
    w_val = np.empty(n)
    resid = np.empty(m)
    b_norm = np.sqrt(seq_sum(b * b))
    last = -1
    prev = -1
    ctr = 0
    k = 0
    n_obl = 0
    n_deg = 0
    n_hist = 0
    stall = 0

    err_sq, xn_sq = err_and_norm(x, x_true, has_true)
    if has_true:
        hist[0] = err_sq / xt_norm_sq
        n_hist = 1
    done = False
    if stop_kind == STOP_RSE:
        done = err_sq / xt_norm_sq < tol
    elif stop_kind == STOP_ERROR:
        done = np.sqrt(err_sq) <= tol
    elif stop_kind == STOP_RESIDUAL:
        full_residual(mat, b, x, resid)
        done = np.sqrt(seq_sum(resid * resid)) <= tol * b_norm
    if done:
        return 0, CONVERGED, 0, 0, n_hist, ctr, last, prev

    while k < max_iters:
        i, kind, ctr, d, h, r, alpha, step_sq = advance(
            mat, b, cum_norms, x, selection, oblique, last, prev, seed, ctr,
            eps_rel, skip_degenerate, pre, w_idx, w_val, resid)
        prev = last
        last = i
        k += 1
        if kind == KIND_OBLIQUE:
            n_obl += 1
        elif kind != KIND_ORTHOGONAL:
            n_deg += 1

        err_sq, xn_sq = err_and_norm(x, x_true, has_true)
        if has_true and k % hist_stride == 0:
            hist[n_hist] = err_sq / xt_norm_sq
            n_hist += 1

        if stop_kind == STOP_RSE:
            done = err_sq / xt_norm_sq < tol
        elif stop_kind == STOP_ERROR:
            done = np.sqrt(err_sq) <= tol
        elif stop_kind == STOP_RESIDUAL and k % residual_interval == 0:
            full_residual(mat, b, x, resid)
            done = np.sqrt(seq_sum(resid * resid)) <= tol * b_norm
        if done:
            if has_true and k % hist_stride != 0:
                hist[n_hist] = err_sq / xt_norm_sq
                n_hist += 1
            return k, CONVERGED, n_obl, n_deg, n_hist, ctr, last, prev

        if step_sq <= STALL_RATIO_SQ * xn_sq:
            stall += 1
            if stall >= stall_window:
                return k, STAGNATION, n_obl, n_deg, n_hist, ctr, last, prev
        else:
            stall = 0
    return k, ITERATION_CAP, n_obl, n_deg, n_hist, ctr, last, prev
