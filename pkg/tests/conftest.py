import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kaczko import GeneratorSpec, Problem, RowMatrix, generate

DATA = Path(__file__).parent / "data"
ROOT = Path(__file__).parent.parent


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def small_dense():
    return generate(GeneratorSpec(m=40, n=8, seed=11))


@pytest.fixture
def small_sparse():
    return generate(GeneratorSpec(family="sparse-uniform", m=60, n=15, density=0.3, seed=5))


def rank_deficient(m, n, rank, seed, sparse=False):
    """Consistent system whose solution is not in R(A^T) (so x_true != least-norm)."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    if sparse:
        a[np.abs(a) < 0.3] = 0.0
    x = rng.standard_normal(n)
    mat = RowMatrix.from_dense(a) if not sparse else RowMatrix.from_scipy(__import__(
        "scipy.sparse", fromlist=["csr_matrix"]).csr_matrix(a))
    return Problem(mat=mat, b=mat.matvec(x), x_true=x, name=f"rank{rank}-{m}x{n}")


def run_python(code, env_extra=None, timeout=300):
    env = dict(os.environ)
    env.update(env_extra or {})
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                          text=True, timeout=timeout)


# --- acceptance summary ---------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        def order(line):
            cid = line.split()[1]
            digits = "".join(ch for ch in cid if ch.isdigit())
            return int(digits), cid
        for line in sorted(ACCEPTANCE_LINES, key=order):
            terminalreporter.write_line(line)
