"""Reference solvers used for comparison runs.

Two baselines: the classical multiplicative update rule for the whole
factorization, and a plain projected exact-line-search solver for single
quadratic programs (no rescaling, no coordinate descent), which is what the
combined algorithm degenerates to if both of its accelerations are removed.
"""

from __future__ import annotations

import enum
import time

import numpy as np

from .matrix import DenseMatrix, SparseMatrix, require_nonnegative
from .nmf import ConvergenceLog, NmfModel, initial_factors, regularized_objective
from .nqp import NqpProblem, NqpSolution, passive_mask

MUR_FLOOR = 1e-12


class BaselineKind(enum.Enum):
    MUR = "mur"
    PLAIN_EXACT_LINE_SEARCH = "plain-els"


def _gtv_and_vft(V, G, F):
    """Both cross products G'V (r x m) and V F' (n x r) without densifying V."""
    if isinstance(V, SparseMatrix):
        col_of = np.repeat(np.arange(V.cols, dtype=np.int64), np.diff(V.indptr))
        gtv_t = np.zeros((V.cols, G.shape[1]))
        np.add.at(gtv_t, col_of, G[V.indices, :] * V.values[:, None])
        vft = np.zeros((V.rows, F.shape[0]))
        np.add.at(vft, V.indices, V.values[:, None] * F[:, col_of].T)
        return gtv_t.T, vft
    arr = V.array if isinstance(V, DenseMatrix) else V
    return G.T @ arr, arr @ F.T


def mur_step(V, G, F):
    """One multiplicative update of both factors.

    F <- F * (G'V) / (G'G F + floor), then G <- G * (V F') / (G F F' + floor)
    with the updated F. The floor only guards the divisions; nonnegativity
    and the classical non-increase of the residual are preserved.
    """
    gtv, _ = _gtv_and_vft(V, G, F)
    F = F * (gtv / (G.T @ G @ F + MUR_FLOOR))
    _, vft = _gtv_and_vft(V, G, F)
    G = G * (vft / (G @ (F @ F.T) + MUR_FLOOR))
    return G, F


def mur_fit(V, cfg):
    """Multiplicative-update factorization under the same config surface as
    the accelerated driver: same seeded initialization, same log format.

    Penalty weights in cfg are ignored (this is the plain baseline); the
    logged objective still includes them so runs stay comparable. By the
    one-update-per-subproblem convention its k_bar is identically 1.
    """
    if isinstance(V, np.ndarray):
        V = DenseMatrix(V)
    require_nonnegative(V, "data matrix")
    n, m = (V.rows, V.cols)
    G, FT = initial_factors(V, cfg)
    F = np.ascontiguousarray(FT.T)
    log = ConvergenceLog()
    started = time.perf_counter()
    previous = None
    for _ in range(cfg.max_outer):
        G, F = mur_step(V, G, F)
        model = NmfModel(G=DenseMatrix(G), F=DenseMatrix(F))
        objective = regularized_objective(V, model, cfg)
        log.append(objective, time.perf_counter() - started, m + n, m + n)
        if (
            cfg.rel_change_tol > 0.0
            and previous is not None
            and abs(previous - objective)
            <= cfg.rel_change_tol * max(abs(previous), 1e-300)
        ):
            break
        previous = objective
    return NmfModel(G=DenseMatrix(G), F=DenseMatrix(F)), log


def plain_els_solve(p: NqpProblem, x0=None, tol=1e-10, max_iter=10000) -> NqpSolution:
    """Projected exact line search directly on (H, h): no rescaling, no
    coordinate descent. The reference for how many iterations the bare
    first-order method needs.
    """
    H, h = p.H, p.h
    x = np.asarray(p.x0 if x0 is None else x0, dtype=np.float64).copy()
    grad = H @ x + h

    def masked(g, xx):
        return np.where(passive_mask(xx, g), g, 0.0)

    def objective(xx):
        return float(0.5 * xx @ (H @ xx) + h @ xx)

    d = masked(grad, x)
    norm0 = float(d @ d)
    norm_hist = [norm0]
    obj_hist = [objective(x)]
    norm_k = norm0
    iterations = 0
    while norm_k > tol * norm0 and iterations < max_iter:
        d = masked(grad, x)
        curvature = float(d @ (H @ d))
        alpha = (norm_k / curvature) if curvature > 0.0 else 1.0
        x_new = np.maximum(x - alpha * d, 0.0)
        stagnated = np.array_equal(x_new, x)
        grad = grad + H @ (x_new - x)
        x = x_new
        iterations += 1
        d = masked(grad, x)
        norm_k = float(d @ d)
        norm_hist.append(norm_k)
        obj_hist.append(objective(x))
        if stagnated:
            break
    return NqpSolution(
        x=x,
        grad=grad,
        inner_iterations=iterations,
        initial_passive_grad_norm_sq=norm0,
        final_passive_grad_norm_sq=norm_k,
        passive_grad_norm_history=np.asarray(norm_hist),
        objective_history=np.asarray(obj_hist),
    )
