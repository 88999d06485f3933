"""Alternating factorization driver.

Each outer iteration runs two symmetric halves. The coefficient step fixes
the components G and solves one nonnegative quadratic program per data
column (shared quadratic term Gt G + 2 mu2 I), accumulating the rank-one
sums Y += F_i V_i' and H += F_i F_i' as it goes. The component step then
fixes F and solves one program per feature row against the accumulated Y
and H. Both L1 weights enter the linear terms and both L2 weights enter the
quadratic diagonals, which is the exact expansion of the penalized
objective, so every subproblem warm-started from its previous solution can
only lower the global objective.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import parallel
from .exceptions import NumericalFailureError
from .matrix import (
    DenseMatrix,
    SparseMatrix,
    frobenius_objective,
    gram,
    require_nonnegative,
    sparse_col_times_dense,
)
from .nqp import DEFAULT_EPSILON, DEFAULT_MAX_INNER, NqpProblem


@dataclass
class NmfConfig:
    """Knobs for one factorization run.

    mu1/mu2 are the L1/L2 weights on the coefficients F, beta1/beta2 the
    L1/L2 weights on the components G. epsilon is the accelerated stopping
    ratio of the inner solver (0 means solve subproblems to stagnation).
    rel_change_tol is the early-exit floor on the relative objective change
    between outer iterations (0 disables early exit).
    """

    rank: int
    max_outer: int = 300
    epsilon: float = DEFAULT_EPSILON
    mu1: float = 0.0
    mu2: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    workers: int = 1
    seed: int = 0
    inner_cap: int = DEFAULT_MAX_INNER
    rel_change_tol: float = 1e-10

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        for name in ("mu1", "mu2", "beta1", "beta2"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if self.inner_cap < 1:
            raise ValueError("inner_cap must be >= 1")


@dataclass
class NmfModel:
    """Nonnegative factors: components G (n x r) and coefficients F (r x m)."""

    G: DenseMatrix
    F: DenseMatrix


@dataclass
class ConvergenceLog:
    """Per-outer-iteration record: objective, cumulative wall seconds, total
    inner solver iterations, and their average per subproblem k_bar."""

    objective: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    k_bar: list = field(default_factory=list)

    def append(self, objective, seconds, inner_iterations, subproblems):
        self.objective.append(float(objective))
        self.seconds.append(float(seconds))
        self.inner_iterations.append(int(inner_iterations))
        self.k_bar.append(inner_iterations / subproblems)

    def __len__(self):
        return len(self.objective)

    @property
    def final_objective(self):
        return self.objective[-1]


def _shape(V):
    return V.rows, V.cols


def _mean(V):
    n, m = _shape(V)
    total = float(np.sum(V.values)) if isinstance(V, SparseMatrix) else float(np.sum(V.array))
    return total / (n * m)


def initial_factors(V, cfg):
    """Seeded uniform factors scaled so G F starts at the data's magnitude.

    Returns (G, FT) as C-contiguous (n, r) and (m, r) arrays; G is drawn
    first, then F, so a seed pins both.
    """
    n, m = _shape(V)
    rng = np.random.default_rng(cfg.seed)
    scale = np.sqrt(_mean(V) / cfg.rank)
    g = np.ascontiguousarray(rng.uniform(size=(n, cfg.rank)) * scale)
    f = rng.uniform(size=(cfg.rank, m)) * scale
    ft = np.ascontiguousarray(f.T)
    return g, ft


def build_estep_problem(Q_g, V, col, G, cfg, warm=None):
    """Coefficient subproblem for one data column:
    H = Gt G + 2 mu2 I, h = -Gt V_col + mu1."""
    r = Q_g.array.shape[0]
    H = Q_g.array + (2.0 * cfg.mu2) * np.eye(r)
    if isinstance(V, SparseMatrix):
        gtv = sparse_col_times_dense(V, col, G)
    else:
        gtv = G.array.T @ V.array[:, col]
    h = -gtv + cfg.mu1
    return NqpProblem(H, h, warm)


def build_mstep_problem(H_f, Y, row, cfg, warm=None):
    """Component subproblem for one feature row:
    H = F Ft + 2 beta2 I, h = -Y_row + beta1."""
    r = H_f.array.shape[0]
    H = H_f.array + (2.0 * cfg.beta2) * np.eye(r)
    h = -Y.array[:, row] + cfg.beta1
    return NqpProblem(H, h, warm)


def regularized_objective(V, model, cfg):
    """0.5 ||V - GF||^2 + mu1 |F| + beta1 |G| + mu2 ||F||^2 + beta2 ||G||^2."""
    g = model.G.array
    f = model.F.array
    value = frobenius_objective(V, model.G, model.F)
    if cfg.mu1:
        value += cfg.mu1 * float(np.sum(np.abs(f)))
    if cfg.beta1:
        value += cfg.beta1 * float(np.sum(np.abs(g)))
    if cfg.mu2:
        value += cfg.mu2 * float(np.sum(f * f))
    if cfg.beta2:
        value += cfg.beta2 * float(np.sum(g * g))
    return value


def fit(V, cfg):
    """Run the alternation for cfg.max_outer iterations (or until the
    relative objective change falls below cfg.rel_change_tol).

    Deterministic for a fixed seed and worker count. Raises
    NumericalFailureError with the log up to the failure point if any
    subproblem degenerates; the failing column/row index is attached.
    """
    if isinstance(V, np.ndarray):
        V = DenseMatrix(V)
    require_nonnegative(V, "data matrix")
    n, m = _shape(V)
    G, FT = initial_factors(V, cfg)
    log = ConvergenceLog()
    vt_dense = None
    if isinstance(V, DenseMatrix):
        vt_dense = np.ascontiguousarray(V.array.T)
    started = time.perf_counter()
    previous = None
    try:
        for _ in range(cfg.max_outer):
            Q_g = gram(DenseMatrix(G))
            data = V if isinstance(V, SparseMatrix) else vt_dense
            Y, H_f, e_stats = parallel.run_estep(data, G, Q_g.array, cfg, FT)
            m_stats = parallel.run_mstep(Y, H_f, cfg, G)
            model = NmfModel(G=DenseMatrix(G), F=DenseMatrix(FT.T))
            objective = regularized_objective(V, model, cfg)
            inner = e_stats.inner_iterations + m_stats.inner_iterations
            log.append(objective, time.perf_counter() - started, inner, m + n)
            if on_iteration is not None:
                on_iteration(log)
            if (
                cfg.rel_change_tol > 0.0
                and previous is not None
                and abs(previous - objective)
                <= cfg.rel_change_tol * max(abs(previous), 1e-300)
            ):
                break
            previous = objective
    except NumericalFailureError as err:
        err.log = log
        raise
    model = NmfModel(G=DenseMatrix(G), F=DenseMatrix(np.asfortranarray(FT.T)))
    return model, log
