"""Multi-trial benchmark runs and their CSV / table output.

Plans are plain ``key = value`` text files::

    # comments start with '#'
    experiment = table1-desk
    source = generator          # generator | fixture | file
    family = uniform-dense
    m = 1000                    # m, n, c, density accept comma lists (sweeps)
    n = 200
    seed = 42
    trials = 20
    stop = rse
    rse_tol = 0.5e-6
    max_iters = 100000

    [solver]
    name = k

    [solver]
    name = ko
    mode = preprocess

Stop-rule keys belong to the top section only, so every solver in a plan
shares the same termination condition.
"""
import csv
import io
import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .problems import GeneratorSpec, two_row_fixture, generate, load_matrix_market
from .solvers import SolverConfig, derive_seed, solve

CSV_COLUMNS = ["experiment-id", "solver", "m", "n", "c/density", "trials", "mean-IT",
               "mean-CPU-seconds", "converged-fraction"]
CAP_MARK = "-"

_TOP_KEYS = {"experiment", "source", "family", "m", "n", "c", "density", "seed", "fixture",
             "path", "rhs", "trials", "stop", "rse_tol", "error_tol", "residual_tol",
             "max_iters", "workers", "matrix_per_trial", "output", "history_stride"}
_STOP_KEYS = {"stop", "rse_tol", "error_tol", "residual_tol", "max_iters"}
_SOLVER_KEYS = {"name", "label", "selection", "projection", "mode", "epsilon_rel", "degenerate"}
_SWEEP_KEYS = ("m", "n", "c", "density")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSource:
    kind: str  # generator | fixture | file
    experiment_id: str
    spec: GeneratorSpec = None
    fixture: int = 1
    path: str = ""
    rhs: str = "all-ones"

    def param_cell(self):
        if self.kind != "generator":
            return ""
        if self.spec.family == "sparse-uniform":
            return f"{self.spec.density:g}"
        return f"{self.spec.c:g}"

    def build(self, seed=None):
        if self.kind == "fixture":
            return two_row_fixture(self.fixture)
        if self.kind == "file":
            return load_matrix_market(self.path, rhs_mode=self.rhs)
        spec = self.spec if seed is None else replace(self.spec, seed=seed)
        return generate(spec)


@dataclass
class ExperimentPlan:
    name: str
    sources: list
    solvers: list
    trials: int = 50
    seed: int = 0
    workers: int = 1
    matrix_per_trial: bool = False
    output: str = ""

    def check(self):
        if self.trials < 1:
            raise PlanError("trials must be >= 1")
        if not self.solvers:
            raise PlanError("plan has no [solver] blocks")
        if not self.sources:
            raise PlanError("plan has no problem source")
        stops = {(s.stop, s.tolerance, s.max_iters) for s in self.solvers}
        if len(stops) != 1:
            raise PlanError("all solvers in a plan must share one stop rule")
        labels = [s.label for s in self.solvers]
        if len(set(labels)) != len(labels):
            raise PlanError(f"duplicate solver labels {labels}; set label = ... to disambiguate")


@dataclass
class SolverSummary:
    """Per-solver aggregate over the trials of one experiment."""

    experiment_id: str
    solver: str
    m: int
    n: int
    param: str
    iterations: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    reasons: list = field(default_factory=list)

    @property
    def trials(self):
        return len(self.iterations)

    @property
    def mean_iterations(self):
        return Fraction(sum(self.iterations), self.trials)

    @property
    def mean_cpu(self):
        return sum(self.wall_times) / self.trials

    @property
    def converged_fraction(self):
        return Fraction(sum(r == "converged" for r in self.reasons), self.trials)

    @property
    def capped(self):
        """Any trial that did not converge; rendered as '-'."""
        return any(r != "converged" for r in self.reasons)


def _parse_value(text):
    return text.split("#", 1)[0].strip()


def parse_plan_text(text, base_dir="."):
    top = {}
    blocks = []
    current = top
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[solver]":
                raise PlanError(f"line {lineno}: unknown section {line}")
            current = {}
            blocks.append(current)
            continue
        if "=" not in line:
            raise PlanError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        allowed = _TOP_KEYS if current is top else _SOLVER_KEYS
        if key not in allowed:
            where = "top section" if current is top else "[solver] block"
            hint = " (stop-rule keys go in the top section)" if key in _STOP_KEYS else ""
            raise PlanError(f"line {lineno}: key {key!r} not allowed in {where}{hint}")
        if key in current:
            raise PlanError(f"line {lineno}: duplicate key {key!r}")
        current[key] = value
    return _build_plan(top, blocks, Path(base_dir))


def load_plan(path):
    path = Path(path)
    return parse_plan_text(path.read_text(), base_dir=path.parent)


def _as_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise PlanError(f"expected a boolean, got {text!r}")


def _build_plan(top, blocks, base_dir):
    try:
        name = top.get("experiment", "experiment")
        seed = int(top.get("seed", "0"))
        stop_kw = {"stop": top.get("stop", "rse"), "max_iters": int(top.get("max_iters", "100000"))}
        for key in ("rse_tol", "error_tol", "residual_tol"):
            if key in top:
                stop_kw[key] = float(top[key])
        if "history_stride" in top:
            stop_kw["history_stride"] = int(top["history_stride"])
        solvers = []
        for block in blocks:
            if "name" not in block:
                raise PlanError("[solver] block needs name = k|rk|ko|rko|mr|md")
            kw = dict(stop_kw)
            for key in ("selection", "projection", "mode", "degenerate"):
                if key in block:
                    kw[key] = block[key]
            if "epsilon_rel" in block:
                kw["epsilon_rel"] = float(block["epsilon_rel"])
            kw["name"] = block.get("label", block["name"].lower())
            cfg = SolverConfig.preset(block["name"], **kw)
            cfg.check()
            solvers.append(cfg)
        sources = _build_sources(name, top, seed, base_dir)
        plan = ExperimentPlan(name=name, sources=sources, solvers=solvers,
                              trials=int(top.get("trials", "50")), seed=seed,
                              workers=int(top.get("workers", "1")),
                              matrix_per_trial=_as_bool(top.get("matrix_per_trial", "false")),
                              output=top.get("output", ""))
    except PlanError:
        raise
    except ValueError as exc:
        raise PlanError(str(exc)) from exc
    plan.check()
    return plan


def _build_sources(name, top, seed, base_dir):
    kind = top.get("source", "generator")
    if kind == "fixture":
        which = int(top.get("fixture", "1"))
        return [ProblemSource(kind="fixture", experiment_id=name, fixture=which)]
    if kind == "file":
        if "path" not in top:
            raise PlanError("source = file needs path = ...")
        path = Path(top["path"])
        if not path.is_absolute():
            path = base_dir / path
        return [ProblemSource(kind="file", experiment_id=name, path=str(path),
                              rhs=top.get("rhs", "all-ones"))]
    if kind != "generator":
        raise PlanError(f"unknown source {kind!r}")
    family = top.get("family", "uniform-dense")
    lists = {}
    for key in _SWEEP_KEYS:
        default = {"m": "100", "n": "20", "c": "0", "density": "1"}[key]
        lists[key] = [v.strip() for v in top.get(key, default).split(",")]
    swept = [k for k in _SWEEP_KEYS if len(lists[k]) > 1]
    sources = []
    for combo in itertools.product(*(lists[k] for k in _SWEEP_KEYS)):
        vals = dict(zip(_SWEEP_KEYS, combo))
        spec = GeneratorSpec(family=family, m=int(vals["m"]), n=int(vals["n"]),
                             c=float(vals["c"]), density=float(vals["density"]), seed=seed)
        spec.check()
        suffix = "".join(f"-{k}{vals[k]}" for k in swept)
        sources.append(ProblemSource(kind="generator", experiment_id=name + suffix, spec=spec))
    return sources


def run_plan(plan, workers=None):
    """Run every solver for every trial of every experiment in ``plan``.

    Problems are built and every solver config is validated against them
    before any solver runs. Trial ``t`` of solver ``s`` uses seed
    ``derive_seed(plan.seed, s, t)``, so results do not depend on
    scheduling or on ``workers``.
    """
    plan.check()
    workers = plan.workers if workers is None else workers
    problems = []
    for src in plan.sources:
        if plan.matrix_per_trial and src.kind == "generator":
            per_trial = [src.build(derive_seed(plan.seed, "matrix", t)) for t in range(plan.trials)]
        else:
            shared = src.build()
            per_trial = [shared] * plan.trials
        for cfg in plan.solvers:
            cfg.check(per_trial[0].mat.m)
        problems.append(per_trial)

    tasks = [(e, s, t) for e in range(len(plan.sources))
             for s in range(len(plan.solvers)) for t in range(plan.trials)]

    def work(task):
        e, s, t = task
        cfg = plan.solvers[s]
        cfg = replace(cfg, rng_seed=derive_seed(plan.seed, cfg.label, t))
        rep = solve(problems[e][t], cfg)
        return task, rep.iterations, rep.wall_time, rep.reason

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(task) for task in tasks]
    results.sort(key=lambda item: item[0])

    summaries = {}
    for (e, s, t), its, wall, reason in results:
        key = (e, s)
        if key not in summaries:
            src = plan.sources[e]
            prob = problems[e][0]
            summaries[key] = SolverSummary(experiment_id=src.experiment_id,
                                           solver=plan.solvers[s].label, m=prob.mat.m,
                                           n=prob.mat.n, param=src.param_cell())
        summaries[key].iterations.append(its)
        summaries[key].wall_times.append(wall)
        summaries[key].reasons.append(reason)
    return [summaries[k] for k in sorted(summaries)]


def _fmt_fraction(value, places=4):
    if value.denominator == 1:
        return str(value.numerator)
    text = f"{float(value):.{places}f}".rstrip("0").rstrip(".")
    return text


def _cells(rep):
    if rep.capped:
        it, cpu = CAP_MARK, CAP_MARK
    else:
        it, cpu = _fmt_fraction(rep.mean_iterations), f"{rep.mean_cpu:.4f}"
    return it, cpu


def emit(reports, fmt="csv"):
    """Render summaries as CSV or as an aligned per-method table. Returns bytes."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rep in reports:
            it, cpu = _cells(rep)
            writer.writerow([rep.experiment_id, rep.solver, rep.m, rep.n, rep.param, rep.trials,
                             it, cpu, _fmt_fraction(rep.converged_fraction)])
        return buf.getvalue().encode()
    if fmt == "table":
        return _table(reports).encode()
    raise ValueError(f"unknown format {fmt!r}; expected 'csv' or 'table'")


def _table(reports):
    solvers = list(dict.fromkeys(r.solver for r in reports))
    experiments = list(dict.fromkeys(r.experiment_id for r in reports))
    by_key = {(r.experiment_id, r.solver): r for r in reports}
    first = {}
    for r in reports:
        first.setdefault(r.experiment_id, r)
    labels = []
    for exp in experiments:
        r = first[exp]
        extra = f" [{r.param}]" if r.param else ""
        labels.append(f"{exp} {r.m}x{r.n}{extra}")
    lw = max([len("Method")] + [len(s) for s in labels])
    cw = 10
    head = "Method".ljust(lw) + "".join(f" | {s.upper():^{2 * cw + 1}}" for s in solvers)
    sub = "".ljust(lw) + "".join(f" | {'IT':>{cw}} {'CPU':>{cw}}" for _ in solvers)
    rule = "-" * len(head)
    lines = [head, sub, rule]
    for exp, label in zip(experiments, labels):
        row = label.ljust(lw)
        for s in solvers:
            rep = by_key.get((exp, s))
            it, cpu = _cells(rep) if rep else ("", "")
            row += f" | {it:>{cw}} {cpu:>{cw}}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def timed_run_plan(plan, workers=None):
    t0 = time.perf_counter()
    reports = run_plan(plan, workers=workers)
    return reports, time.perf_counter() - t0
