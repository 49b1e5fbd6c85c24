"""Row-action solvers for consistent linear systems, with oblique projection."""
from ._accel import BACKEND, NUMBA_ENABLED
from .linalg import RowMatrix, SpectralStats, ValidationReport, row_dot, spectral_stats, validate
from .problems import (GeneratorSpec, Problem, two_row_fixture, generate,
                       least_norm_oracle, load_matrix_market)
from .solvers import (RunReport, SolverConfig, SolverRefusal, SolverState, iterate_stream,
                      oblique_direction, oblique_step, orthogonal_step, select_next, solve)

__all__ = [
    "BACKEND", "NUMBA_ENABLED", "RowMatrix", "SpectralStats", "ValidationReport", "row_dot",
    "spectral_stats", "validate", "GeneratorSpec", "Problem", "two_row_fixture", "generate",
    "least_norm_oracle", "load_matrix_market", "RunReport", "SolverConfig", "SolverRefusal",
    "SolverState", "iterate_stream", "oblique_direction", "oblique_step", "orthogonal_step",
    "select_next", "solve",
]
__version__ = "0.1.0"
