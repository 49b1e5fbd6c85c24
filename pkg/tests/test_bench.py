import pytest

from kaczko.bench import (CAP_MARK, CSV_COLUMNS, PlanError, SolverSummary, emit, load_plan,
                          parse_plan_text, run_plan)

PLAN = """
# small plan
experiment = tiny
family = uniform-dense
m = 60, 90    # sweep
n = 10
seed = 5
trials = 3
[solver]
name = k
[solver]
name = rko
"""


def _strip_cpu(csv_bytes):
    rows = [line.split(",") for line in csv_bytes.decode().splitlines()]
    col = CSV_COLUMNS.index("mean-CPU-seconds")
    return [r[:col] + r[col + 1:] for r in rows]


def test_parse_sweep_and_solvers():
    plan = parse_plan_text(PLAN)
    assert [s.experiment_id for s in plan.sources] == ["tiny-m60", "tiny-m90"]
    assert [c.label for c in plan.solvers] == ["k", "rko"]
    assert plan.trials == 3 and plan.seed == 5


@pytest.mark.parametrize("text, msg", [
    ("trials = 0\n[solver]\nname = k", "trials"),
    ("m = 10\n", r"no \[solver\]"),
    ("[solver]\nname = k\nrse_tol = 1e-3", "top section"),
    ("bogus = 1\n[solver]\nname = k", "not allowed"),
    ("[solver]\nname = zz", "unknown solver"),
    ("[solver]\nname = k\n[solver]\nname = k", "duplicate solver"),
    ("[oops]\n", "unknown section"),
    ("m 10", "key = value"),
])
def test_plan_errors(text, msg):
    with pytest.raises(PlanError, match=msg):
        parse_plan_text(text)


def test_invalid_subconfig_aborts_before_running():
    plan = parse_plan_text("source = fixture\nfixture = 1\n[solver]\nname = k\n[solver]\nname = rko")
    with pytest.raises(ValueError):
        run_plan(plan)


def test_fixture_plan_ko_two_updates():
    plan = parse_plan_text("source = fixture\nfixture = 2\ntrials = 2\n[solver]\nname = ko")
    (rep,) = run_plan(plan)
    assert rep.iterations == [2, 2] and rep.reasons == ["converged"] * 2


def test_trial_prefix_determinism():
    one = run_plan(parse_plan_text(PLAN.replace("trials = 3", "trials = 1")))
    three = run_plan(parse_plan_text(PLAN))
    for a, b in zip(one, three):
        assert a.iterations[0] == b.iterations[0]


def test_csv_byte_identical_across_runs_and_workers():
    plan = parse_plan_text(PLAN)
    a = _strip_cpu(emit(run_plan(plan, workers=1)))
    b = _strip_cpu(emit(run_plan(plan, workers=4)))
    c = _strip_cpu(emit(run_plan(plan, workers=1)))
    assert a == b == c


def test_emit_empty_and_schema():
    assert emit([]) == (",".join(CSV_COLUMNS) + "\n").encode()
    reps = [SolverSummary("e", "k", 10, 5, "", [3, 4], [0.1, 0.2], ["converged"] * 2),
            SolverSummary("e", "ko", 10, 5, "", [1, 2], [0.1, 0.1], ["converged"] * 2)]
    lines = emit(reps).decode().splitlines()
    assert len(lines) == 3
    assert lines[1].split(",")[:7] == ["e", "k", "10", "5", "", "2", "3.5"]


def test_mean_is_exact():
    rep = SolverSummary("e", "k", 1, 1, "", [1, 2, 2], [0, 0, 0], ["converged"] * 3)
    assert rep.mean_iterations.numerator == 5 and rep.mean_iterations.denominator == 3
    assert emit([rep]).decode().splitlines()[1].split(",")[6] == "1.6667"


def test_cap_rendered_dash_in_both_formats():
    rep = SolverSummary("e", "k", 10, 5, "0.9", [100000, 900], [1.0, 0.1],
                        ["iteration-cap", "converged"])
    row = emit([rep]).decode().splitlines()[1].split(",")
    assert row[6] == CAP_MARK and row[7] == CAP_MARK and row[8] == "0.5"
    table = emit([rep], "table").decode()
    assert table.splitlines()[-1].split("|")[1].split() == [CAP_MARK, CAP_MARK]


def test_emit_rejects_unknown_format():
    with pytest.raises(ValueError):
        emit([], "xml")


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).parent.parent / "configs"
    for cfg in sorted(root.glob("*.cfg")):
        load_plan(cfg).check()
