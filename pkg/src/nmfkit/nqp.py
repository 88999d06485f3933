"""Nonnegative quadratic programming: minimize 0.5 x'Hx + h'x subject to x >= 0.

The solver combines three ingredients:

* unit-diagonal rescaling y = x * sqrt(diag(H)), which equalizes the
  per-coordinate curvature so first-order steps stop ping-ponging between
  badly scaled axes;
* exact line search along the gradient restricted to the passive set
  (coordinates free to move: x_i > 0 or grad_i < 0), with projection back
  onto the nonnegative orthant;
* a greedy coordinate-descent pass that repeatedly applies the closed-form
  clamped update to the coordinate with the largest objective decrease,
  driving the passive set toward its final configuration.

Iteration stops when the squared passive-gradient norm falls below
``epsilon`` times its initial value (accuracy relative to the warm start)
or below the worker-shared ``max_stop`` threshold (the fast break: once one
subproblem in a batch has been solved to some accuracy, later subproblems
need not be solved more accurately than the loosest already accepted).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateProblemError, NumericalFailureError

# Diagonal entries at or below this fraction of the largest one are treated
# as exactly zero curvature: the variable is frozen at 0 (objective is linear
# along it; a negative slope there means the problem is unbounded).
DIAG_FREEZE_REL = 1e-12

DEFAULT_EPSILON = 0.1
DEFAULT_MAX_INNER = 500


@dataclass
class NqpProblem:
    """Quadratic form (H, h) with an optional nonnegative warm start."""

    H: np.ndarray
    h: np.ndarray
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.h = np.asarray(self.h, dtype=np.float64)
        r = self.h.shape[0]
        if self.H.shape != (r, r):
            raise ValueError(f"H must be {r}x{r}, got {self.H.shape}")
        scale = max(1.0, float(np.max(np.abs(self.H))) if self.H.size else 1.0)
        if np.max(np.abs(self.H - self.H.T)) > 1e-12 * scale:
            raise ValueError("H must be symmetric within 1e-12")
        if np.any(np.diag(self.H) < 0):
            raise ValueError("diag(H) must be nonnegative")
        if self.x0 is None:
            self.x0 = np.zeros(r)
        else:
            self.x0 = np.asarray(self.x0, dtype=np.float64)
            if self.x0.shape != (r,):
                raise ValueError(f"x0 must have length {r}")
            if np.any(self.x0 < 0):
                raise ValueError("x0 must be nonnegative")

    @property
    def size(self):
        return self.h.shape[0]


@dataclass
class RescaledProblem:
    """Unit-diagonal form of an NqpProblem over its active dimensions.

    ``Q[i, j] = H[i, j] / sqrt(H[i, i] H[j, j])`` and ``q = h / sqrt(diag(H))``
    for active dims; rows/columns of frozen dims are zeroed. The map
    ``y = x * scale`` turns 0.5 x'Hx + h'x into 0.5 y'Qy + q'y.
    """

    Q: np.ndarray
    q: np.ndarray
    scale: np.ndarray
    active_dims: np.ndarray


@dataclass
class NqpSolution:
    x: np.ndarray
    grad: np.ndarray
    inner_iterations: int
    initial_passive_grad_norm_sq: float
    final_passive_grad_norm_sq: float
    passive_grad_norm_history: np.ndarray
    objective_history: np.ndarray


@dataclass
class StopState:
    """Per-worker stopping state: epsilon for the accelerated condition and
    the monotone fast-break threshold shared by successive solves."""

    epsilon: float = DEFAULT_EPSILON
    max_stop: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.max_stop < 0.0:
            raise ValueError("max_stop must be >= 0")

    def update(self, final_norm_sq):
        self.max_stop = max(self.max_stop, float(final_norm_sq))


def rescale_arrays(H):
    """Rescaling pieces (scale, active mask, unit-diagonal Q) for a raw H.

    Tolerates an empty active set; callers that require at least one active
    dimension should check the mask (``rescale`` does).
    """
    diag = np.diag(H).copy()
    delta = DIAG_FREEZE_REL * (float(diag.max()) if diag.size else 0.0)
    active = diag > delta
    scale = np.sqrt(diag)
    q_scale = np.where(active, scale, 1.0)
    Q = H / np.outer(q_scale, q_scale)
    Q[~active, :] = 0.0
    Q[:, ~active] = 0.0
    Q[np.diag_indices_from(Q)] = np.where(active, 1.0, 0.0)
    return scale, active, Q


def rescale(p: NqpProblem) -> RescaledProblem:
    """Unit-diagonal rescaling of p; raises if every dimension is degenerate."""
    scale, active, Q = rescale_arrays(p.H)
    if not active.any():
        raise DegenerateProblemError(
            "all diagonal entries are numerically zero; objective is linear "
            "in every variable"
        )
    q = np.where(active, p.h / np.where(active, scale, 1.0), 0.0)
    return RescaledProblem(Q=Q, q=q, scale=scale, active_dims=active)


def passive_mask(x, grad):
    """Coordinates free to move: positive value or negative gradient."""
    return (x > 0) | (grad < 0)


def exact_line_search_step(Q, q, x, grad):
    """One projected exact-line-search step along the passive-set gradient.

    The step length minimizes the quadratic along the masked gradient;
    the result is projected back onto the nonnegative orthant and the
    gradient is updated incrementally over the changed coordinates only.
    If the projection would increase the objective (possible when the
    optimal free step overshoots past a clamped coordinate), the step is
    shortened to the first breakpoint, where descent is guaranteed.
    """
    d = np.where(passive_mask(x, grad), grad, 0.0)
    norm_sq = float(d @ d)
    if norm_sq == 0.0:
        return x.copy(), grad.copy()
    curvature = float(d @ (Q @ d))
    # Q is PSD so curvature <= 0 only through rounding; the unit step is
    # the ideal step for a perfectly conditioned (identity) Q.
    alpha = norm_sq / curvature if curvature > 0.0 else 1.0

    def take(step):
        x_new = np.maximum(x - step * d, 0.0)
        delta = x_new - x
        changed = np.flatnonzero(delta)
        q_delta = Q[:, changed] @ delta[changed] if len(changed) else np.zeros_like(x)
        df = float(grad @ delta + 0.5 * delta @ q_delta)
        return x_new, grad + q_delta, df

    x_new, grad_new, df = take(alpha)
    if df > 0.0:
        clamped = (d > 0) & (x > 0)
        if clamped.any():
            alpha_bp = float(np.min(x[clamped] / d[clamped]))
            if alpha_bp < alpha:
                x_new, grad_new, _ = take(alpha_bp)
    return x_new, grad_new


def greedy_cd_pass(Q, q, x, grad, sweeps=None):
    """Greedy coordinate descent: ``sweeps`` single-coordinate updates.

    Each update applies the closed-form clamped minimizer to the coordinate
    whose update decreases the objective the most (ties break to the lowest
    index). Requires unit diagonal on the dimensions in play, which the
    rescaling guarantees. ``q`` is implicit in ``grad`` and kept for
    signature symmetry with the line-search step.
    """
    x = x.copy()
    grad = grad.copy()
    if sweeps is None:
        sweeps = len(x)
    for _ in range(sweeps):
        dx = np.maximum(0.0, x - grad) - x
        decrease = np.abs(grad * dx + 0.5 * dx * dx)
        p = int(np.argmax(decrease))
        if decrease[p] <= 0.0:
            break
        grad += Q[:, p] * dx[p]
        x[p] += dx[p]
    return x, grad


def _passive_norm_sq(x, grad):
    d = np.where(passive_mask(x, grad), grad, 0.0)
    return float(d @ d)


def solve(p: NqpProblem, stop: StopState | None = None,
          max_inner: int = DEFAULT_MAX_INNER, check_gradients: bool = False) -> NqpSolution:
    """Solve an NQP problem to the accuracy governed by ``stop``.

    Each inner iteration is one exact-line-search step followed by one
    greedy coordinate-descent pass of r updates, in the rescaled space.
    Returns the solution in the original scale; afterwards ``stop.max_stop``
    is raised to the final squared passive-gradient norm so subsequent
    solves sharing the state may fast-break.
    """
    if stop is None:
        stop = StopState()
    if max_inner < 1:
        raise ValueError("max_inner must be >= 1")
    r = p.size

    if np.all(p.h >= 0.0):
        # The origin is the exact global optimum: 0.5 x'Hx >= 0 and h'x >= 0
        # for every feasible x. No iterations, no rescaling needed.
        stop.update(0.0)
        return NqpSolution(
            x=np.zeros(r), grad=p.h.copy(), inner_iterations=0,
            initial_passive_grad_norm_sq=0.0, final_passive_grad_norm_sq=0.0,
            passive_grad_norm_history=np.zeros(1), objective_history=np.zeros(1),
        )

    grad0 = p.H @ p.x0 + p.h
    if _passive_norm_sq(p.x0, grad0) == 0.0:
        # warm start already satisfies the optimality conditions exactly
        stop.update(0.0)
        f0 = float(0.5 * p.x0 @ grad0 + 0.5 * p.h @ p.x0)
        return NqpSolution(
            x=p.x0.copy(), grad=grad0, inner_iterations=0,
            initial_passive_grad_norm_sq=0.0, final_passive_grad_norm_sq=0.0,
            passive_grad_norm_history=np.zeros(1),
            objective_history=np.asarray([f0]),
        )

    rescaled = rescale(p)
    active = rescaled.active_dims
    if np.any(p.h[~active] < 0.0):
        frozen = int(np.flatnonzero(~active & (p.h < 0.0))[0])
        raise NumericalFailureError(
            f"objective is unbounded along degenerate dimension {frozen} "
            f"(zero curvature, negative slope)",
            last_x=p.x0.copy(),
        )
    idx = np.flatnonzero(active)
    Qa = np.ascontiguousarray(rescaled.Q[np.ix_(idx, idx)])
    qa = rescaled.q[idx]
    sa = rescaled.scale[idx]
    y = p.x0[idx] * sa
    grad = Qa @ y + qa

    def objective(yy):
        return float(0.5 * yy @ (Qa @ yy) + qa @ yy)

    norm0 = _passive_norm_sq(y, grad)
    norm_hist = [norm0]
    obj_hist = [objective(y)]
    norm_k = norm0
    iterations = 0
    y_last_finite = y.copy()

    if norm0 > 0.0:
        threshold = stop.epsilon * norm0
        while iterations < max_inner:
            y_start = y
            y, grad = exact_line_search_step(Qa, qa, y, grad)
            y, grad = greedy_cd_pass(Qa, qa, y, grad)
            iterations += 1
            if not (np.all(np.isfinite(y)) and np.all(np.isfinite(grad))):
                x_last = np.zeros(r)
                x_last[idx] = y_last_finite / sa
                raise NumericalFailureError(
                    f"NaN/Inf after {iterations} inner iterations", last_x=x_last
                )
            y_last_finite = y.copy()
            if check_gradients:
                fresh = Qa @ y + qa
                ref = max(1.0, float(np.max(np.abs(fresh))))
                if np.max(np.abs(grad - fresh)) > 1e-9 * ref:
                    raise AssertionError("incremental gradient drifted from Qx + q")
            norm_k = _passive_norm_sq(y, grad)
            norm_hist.append(norm_k)
            obj_hist.append(objective(y))
            if norm_k <= threshold or norm_k <= stop.max_stop:
                break
            if np.array_equal(y, y_start):
                # stagnation: no representable progress left
                break

    stop.update(norm_k)
    x = np.zeros(r)
    x[idx] = y / sa
    return NqpSolution(
        x=x,
        grad=p.H @ x + p.h,
        inner_iterations=iterations,
        initial_passive_grad_norm_sq=norm0,
        final_passive_grad_norm_sq=norm_k,
        passive_grad_norm_history=np.asarray(norm_hist),
        objective_history=np.asarray(obj_hist),
    )
