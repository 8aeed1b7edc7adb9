"""Randomized Krylov solvers and hybrid regularization for linear inverse problems."""

__version__ = "0.1.0"

from randkrylov.linop import (InverseProblem, LinearOperator, make_blur_problem,
                              make_dense_operator, make_sparse_operator, make_tomo_problem)
from randkrylov.sketch import (EmbeddingSpec, SketchOperator, embedding_dim_default,
                               embedding_dim_theory, make_sketch, measure_epsilon)
from randkrylov.solvers import (SolverConfig, gmres_solve, lsqr_solve, rcgls_solve, rgmres_solve,
                                rlsmr_solve, rlsqr_solve, solve)
from randkrylov.hybrid import RegRule, hybrid_solve, rlsqr_damped_solve
