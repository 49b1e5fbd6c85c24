"""Executable checks of the oblique-projection theory.

* per-step invariants of a recorded run (orthogonality of the step to the
  remaining error, the exact error-decrease identity, hyperplane membership,
  monotone error);
* the expected one-step contraction bound of the randomized oblique method,
  and a Monte Carlo estimate of the actual one-step contraction.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import spectral_stats
from .solvers import (CounterRNG, SolverRefusal, derive_seed, iterate_stream, oblique_step,
                      select_next)


@dataclass(frozen=True)
class ContractionBound:
    m: int
    fro_norm_sq: float
    sigma_min_sq: float
    rho: float


def contraction_bound(mat, tol=1e-12):
    """``rho = 1 - s / ((m - 2) (F - s))`` with ``s`` the smallest nonzero
    squared singular value and ``F`` the squared Frobenius norm."""
    if mat.m <= 2:
        raise SolverRefusal(f"contraction bound needs m > 2, got m={mat.m}")
    stats = spectral_stats(mat, tol=tol)
    s, fro = stats.sigma_min_sq, stats.fro_norm_sq
    if not s < fro:
        raise SolverRefusal("bound is vacuous: sigma_min_sq equals the Frobenius norm")
    rho = 1.0 - s / ((mat.m - 2) * (fro - s))
    return ContractionBound(m=mat.m, fro_norm_sq=fro, sigma_min_sq=s, rho=rho)


@dataclass
class InvariantReport:
    n_steps: int = 0
    n_oblique: int = 0
    max_orthogonality: float = 0.0
    max_decrease_mismatch: float = 0.0
    max_membership: float = 0.0
    max_increase: float = 0.0
    worst_step: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    @property
    def checks(self):
        t = self.tolerances
        return {
            "orthogonality": self.max_orthogonality <= t["orthogonality"],
            "decrease_identity": self.max_decrease_mismatch <= t["decrease_identity"],
            "membership": self.max_membership <= t["membership"],
            "monotonicity": self.max_increase <= t["monotonicity"],
        }

    @property
    def passed(self):
        return all(self.checks.values())

    def summary(self):
        lines = [f"steps={self.n_steps} oblique={self.n_oblique}"]
        values = {
            "orthogonality": self.max_orthogonality,
            "decrease_identity": self.max_decrease_mismatch,
            "membership": self.max_membership,
            "monotonicity": self.max_increase,
        }
        for name, ok in self.checks.items():
            lines.append(f"{name:18s} max={values[name]:.3e} tol={self.tolerances[name]:.0e} "
                         f"worst_step={self.worst_step.get(name, '-')} "
                         f"{'PASS' if ok else 'FAIL'}")
        return "\n".join(lines)


DEFAULT_TOLERANCES = {
    "orthogonality": 1e-8,
    "decrease_identity": 1e-8,
    "membership": 1e-10,
    "monotonicity": 1e-12,
}


def check_run(records, x_true, x0=None, tolerances=None):
    """Scan recorded steps (with iterates) against a known solution ``x_true``.

    Orthogonality is ``|<w, x_new - x_true>| / (|w| |x_new - x_true|)``; the
    decrease identity compares ``|e_old|^2 - |e_new|^2`` with ``r^2 / h``
    relative to ``|e_old|^2``; monotonicity is the relative growth of
    ``|e|``.
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    x_true = np.asarray(x_true, dtype=np.float64)
    rep = InvariantReport(tolerances=tol)
    prev_x = np.zeros_like(x_true) if x0 is None else np.asarray(x0, dtype=np.float64)

    def bump(attr, name, value, k):
        if value > getattr(rep, attr):
            setattr(rep, attr, value)
            rep.worst_step[name] = k

    for rec in records:
        if rec.x is None:
            raise ValueError("check_run needs records with iterates (keep_iterates=True)")
        rep.n_steps += 1
        e_old = prev_x - x_true
        e_new = rec.x - x_true
        n_old = float(np.linalg.norm(e_old))
        n_new = float(np.linalg.norm(e_new))
        if n_old > 0:
            bump("max_increase", "monotonicity", max(0.0, (n_new - n_old) / n_old), rec.k)
        for res in rec.plane_residuals:
            bump("max_membership", "membership", res, rec.k)
        if rec.kind == "oblique":
            rep.n_oblique += 1
            g = rec.geometry
            wn = float(np.linalg.norm(g.w))
            if n_new > 0 and wn > 0:
                bump("max_orthogonality", "orthogonality",
                     abs(float(g.w @ e_new)) / (wn * n_new), rec.k)
            if n_old > 0:
                predicted = g.r * g.r / g.h
                mismatch = abs((n_old * n_old - n_new * n_new) - predicted) / (n_old * n_old)
                bump("max_decrease_mismatch", "decrease_identity", mismatch, rec.k)
        prev_x = rec.x
    return rep


@dataclass
class ContractionEstimate:
    mean_ratio: float
    std_err: float
    trials: int
    k_probe: int
    exact_mean: float = float("nan")
    already_converged: bool = False


def empirical_contraction(problem, config, trials=1000, k_probe=2, seed=0):
    """Monte Carlo estimate of ``E |x_{k+1} - x*|^2 / |x_k - x*|^2`` for the
    randomized oblique method.

    The first ``k_probe`` updates come from one shared seeded run; each
    trial then draws a fresh admissible row (excluding the last two) and
    takes one oblique step. ``exact_mean`` averages the ratio over every
    admissible row and serves as an enumeration cross-check.
    """
    mat = problem.mat
    if mat.m <= 2:
        raise SolverRefusal(f"randomized oblique steps need m > 2, got m={mat.m}")
    if trials < 100:
        raise ValueError("use at least 100 trials")
    if k_probe < 2:
        raise ValueError("probe step must be >= 2 (the bound holds after the first oblique step)")
    if not (config.oblique and config.selection == "uniform-random"):
        raise ValueError("empirical_contraction expects a randomized oblique configuration")
    if problem.x_true is None:
        raise ValueError("problem needs a known solution")
    prefix = replace(config, stop="cap", max_iters=k_probe)
    stream = iterate_stream(problem, prefix, keep_iterates=False)
    for _ in stream:
        pass
    state = stream.state()
    x_star = problem.x_true
    e0 = float(np.dot(state.x - x_star, state.x - x_star))
    if e0 == 0.0:
        return ContractionEstimate(float("nan"), float("nan"), trials, k_probe, already_converged=True)

    def ratio_for(i):
        new, _ = oblique_step(state, mat, problem.b, i, config)
        d = new.x - x_star
        return float(d @ d) / e0

    ratios = []
    for t in range(trials):
        rng = CounterRNG(derive_seed(seed, "probe", k_probe, t))
        i = select_next("uniform-random", state, mat, problem.b, rng, oblique=True)
        ratios.append(ratio_for(i))
    mean = math.fsum(ratios) / trials
    var = math.fsum((r - mean) ** 2 for r in ratios) / (trials - 1)
    admissible = [i for i in range(mat.m) if i not in (state.last_index, state.prev_index)]
    exact = math.fsum(ratio_for(i) for i in admissible) / len(admissible)
    return ContractionEstimate(mean_ratio=mean, std_err=math.sqrt(var / trials), trials=trials,
                               k_probe=k_probe, exact_mean=exact)
