"""``kaczko`` command line: solve, bench, check, gen.

Exit codes: 0 success, 1 usage error, 2 numerical refusal (invalid matrix,
m <= 2 for rko, inconsistent system), 3 when ``check`` finds a violated
invariant.
"""
import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import PlanError, emit, load_plan, run_plan
from .diagnostics import check_run
from .linalg import SpectralError
from .problems import (GeneratorSpec, InconsistentSystemError, MatrixMarketError,
                       two_row_fixture, generate, load_matrix_market, save_problem,
                       write_vector)
from .solvers import PRESETS, SolverConfig, SolverRefusal, derive_seed, iterate_stream, solve

EXIT_OK, EXIT_USAGE, EXIT_REFUSAL, EXIT_CHECK_FAILED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for numerical refusal here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_generator_flags(p):
    p.add_argument("--family", default="uniform-dense",
                   choices=["uniform-dense", "uniform-interval", "sparse-uniform"])
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--c", type=float, default=0.0, help="lower end of the entry interval [c, 1]")
    p.add_argument("--density", type=float, default=1.0)


def _add_stop_flags(p):
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--rse-tol", type=float, default=None)
    p.add_argument("--error-tol", type=float, default=None, help="stop when |x - x*| <= tol")
    p.add_argument("--residual-tol", type=float, default=None,
                   help="stop when |b - Ax| <= tol |b| (checked once per sweep)")


def build_parser():
    parser = _Parser(prog="kaczko", description="Kaczmarz solvers with oblique projection.")
    parser.add_argument("--version", action="version", version=f"kaczko {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run one solver on one problem and print a summary")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--fixture", type=int, choices=[1, 2], help="built-in 2x2 system")
    src.add_argument("--matrix", type=Path, help="Matrix Market file")
    p.add_argument("--rhs", choices=["all-ones", "from-file"], default="all-ones")
    _add_generator_flags(p)
    p.add_argument("--solver", choices=sorted(PRESETS), default="ko")
    p.add_argument("--mode", choices=["online", "preprocess"], default="online")
    p.add_argument("--degenerate", choices=["fallback", "skip"], default="fallback")
    p.add_argument("--epsilon-rel", type=float, default=1e-12)
    p.add_argument("--seed", type=int, default=0)
    _add_stop_flags(p)
    p.add_argument("--out", type=Path, help="write the final iterate as a Matrix Market vector")

    p = sub.add_parser("bench", help="run an experiment plan and emit CSV or a table")
    p.add_argument("config", type=Path)
    p.add_argument("--format", choices=["csv", "table"], default="csv")
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="override the plan's base seed")
    p.add_argument("--trials", type=int, default=None, help="override the plan's trial count")

    p = sub.add_parser("check", help="run the per-step invariant suite over a plan")
    p.add_argument("config", type=Path)
    p.add_argument("--trials", type=int, default=None, help="trials per solver (default min(plan, 3))")
    p.add_argument("--max-steps", type=int, default=2000, help="steps scanned per trial")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen", help="write a generated problem as Matrix Market files")
    _add_generator_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output stem (writes STEM.mtx, STEM_b.mtx, STEM_x.mtx)")
    return parser


def _stop_kwargs(args):
    given = [(name, val) for name, val in (("rse", args.rse_tol), ("error", args.error_tol),
                                          ("residual", args.residual_tol)) if val is not None]
    if len(given) > 1:
        raise UsageError("give at most one of --rse-tol, --error-tol, --residual-tol")
    kw = {"max_iters": args.max_iters}
    if given:
        stop, tol = given[0]
        kw["stop"] = stop
        kw[f"{stop}_tol"] = tol
    return kw


def _problem_from_args(args):
    if getattr(args, "fixture", None) is not None:
        return two_row_fixture(args.fixture)
    if getattr(args, "matrix", None) is not None:
        if not args.matrix.exists():
            raise UsageError(f"no such file: {args.matrix}")
        return load_matrix_market(args.matrix, rhs_mode=args.rhs)
    spec = GeneratorSpec(family=args.family, m=args.m, n=args.n, c=args.c,
                         density=args.density, seed=args.seed)
    try:
        spec.check()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return generate(spec)


def _cmd_solve(args, out):
    problem = _problem_from_args(args)
    kw = _stop_kwargs(args)
    if problem.x_true is None and kw.get("stop", "rse") in ("rse", "error"):
        kw["stop"] = "residual"
    try:
        cfg = SolverConfig.preset(args.solver, mode=args.mode, degenerate=args.degenerate,
                                  epsilon_rel=args.epsilon_rel, rng_seed=args.seed, **kw)
        cfg.check()
    except SolverRefusal:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rep = solve(problem, cfg)
    m, n = problem.shape
    print(f"problem   {problem.name} ({m}x{n})", file=out)
    print(f"solver    {cfg.label} selection={cfg.selection} projection={cfg.projection} "
          f"mode={cfg.mode}", file=out)
    print(f"status    {rep.reason}", file=out)
    print(f"IT={rep.iterations} oblique={rep.n_oblique} degenerate={rep.n_degenerate}", file=out)
    if rep.rse is not None:
        err = float(np.linalg.norm(rep.x - problem.x_true))
        print(f"RSE={rep.rse:.6e} error={err:.6e}", file=out)
    print(f"residual={rep.residual:.6e} wall={rep.wall_time:.6f}s", file=out)
    if args.out:
        write_vector(args.out, rep.x, comment=f"{cfg.label} solution, {rep.reason}")
    return EXIT_OK


def _load_plan(args):
    if not args.config.exists():
        raise UsageError(f"no such config file: {args.config}")
    try:
        plan = load_plan(args.config)
    except PlanError as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    if args.seed is not None:
        plan.seed = args.seed
        plan.sources = [replace(s, spec=replace(s.spec, seed=args.seed)) if s.spec else s
                        for s in plan.sources]
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise UsageError("--trials must be >= 1")
        plan.trials = args.trials
    return plan


def _cmd_bench(args, out):
    plan = _load_plan(args)
    reports = run_plan(plan, workers=args.workers)
    data = emit(reports, args.format)
    target = args.out or (Path(plan.output) if plan.output else None)
    if target:
        target.write_bytes(data)
    else:
        out.write(data.decode())
    return EXIT_OK


def _cmd_check(args, out):
    plan = _load_plan(args)
    trials = args.trials if args.trials is not None else min(plan.trials, 3)
    ok = True
    for src in plan.sources:
        problem = src.build()
        for cfg in plan.solvers:
            cfg.check(problem.mat.m)
        for cfg in plan.solvers:
            for t in range(trials):
                run_cfg = replace(cfg, rng_seed=derive_seed(plan.seed, cfg.label, t),
                                  max_iters=min(cfg.max_iters, args.max_steps))
                stream = iterate_stream(problem, run_cfg)
                report = check_run(stream, problem.x_true)
                ok &= report.passed
                print(f"[{src.experiment_id} {cfg.label} trial={t}] "
                      f"{'PASS' if report.passed else 'FAIL'}", file=out)
                for line in report.summary().splitlines():
                    print(f"  {line}", file=out)
    print("all invariants hold" if ok else "invariant violations found", file=out)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_gen(args, out):
    problem = _problem_from_args(args)
    for path in save_problem(args.out, problem):
        print(path, file=out)
    return EXIT_OK


_COMMANDS = {"solve": _cmd_solve, "bench": _cmd_bench, "check": _cmd_check, "gen": _cmd_gen}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (SolverRefusal, InconsistentSystemError, SpectralError, MatrixMarketError) as exc:
        print(f"kaczko: refused: {exc}", file=sys.stderr)
        return EXIT_REFUSAL
    except OSError as exc:
        print(f"kaczko: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
