"""Accelerated nonnegative matrix factorization.

The factorization V ~ G F is computed by alternating least squares where
every column/row update is an independent nonnegative quadratic program,
solved by a combined unit-diagonal rescaling, exact line search over the
passive set, and greedy coordinate descent.
"""

__version__ = "0.1.0"

from .matrix import DenseMatrix, SparseMatrix
from .nmf import ConvergenceLog, NmfConfig, NmfModel, fit, regularized_objective
from .nqp import NqpProblem, NqpSolution, StopState, solve

__all__ = [
    "DenseMatrix",
    "SparseMatrix",
    "NqpProblem",
    "NqpSolution",
    "StopState",
    "solve",
    "NmfConfig",
    "NmfModel",
    "ConvergenceLog",
    "fit",
    "regularized_objective",
    "__version__",
]
