"""Compiled per-shard solver loops for the factorization driver.

These kernels run the same algorithm as :mod:`nmfkit.nqp` (rescaled exact
line search plus greedy coordinate descent, dual stopping rule) but process
a contiguous shard of columns in one call, so the per-column cost is a few
flops rather than a few interpreter round trips. They release the GIL, which
is what lets shard workers run genuinely in parallel on threads.

Layout conventions (all C-contiguous):

* ``G``   is (n, r): component k is the column slice ``G[:, k]``, and a data
  row slice ``G[row, :]`` is contiguous, which is what the inner loops walk.
* ``FT``  is (m, r): coefficient vector of data column i is the row ``FT[i]``.
* ``YT``  is (n, r): the running accumulator of coefficient-times-data
  rank-one terms, stored transposed for contiguous row updates.

Active/frozen dimensions: ``act_idx`` lists the dimensions with nonzero
curvature; the solver works in that compact subspace and frozen entries of
the solution stay 0. A negative linear term on a frozen dimension means the
subproblem is unbounded; the kernel reports the offending column instead of
iterating into NaN.
"""

import numpy as np
from numba import njit

FAIL_NONE = -1

# The fast-break threshold is shared within fixed, absolutely aligned blocks
# of columns (rows in the component step) rather than within whole worker
# shards: shard boundaries then cannot change which subproblems break early,
# so results are independent of the worker count. Shards handed to the
# kernels should start on block boundaries; a mid-block start simply begins
# a fresh scope.
FASTBREAK_BLOCK = 32


@njit(nogil=True, cache=True)
def _solve_rescaled(Q, q, y, grad, eps, max_stop, max_inner, d, ynew, delta, qd):
    """Inner solver on one compact rescaled problem; y and grad in place.

    Returns (iterations, initial_norm_sq, final_norm_sq); iterations is
    negated when NaN/Inf appeared.
    """
    r = y.shape[0]
    norm0 = 0.0
    for i in range(r):
        if y[i] > 0.0 or grad[i] < 0.0:
            norm0 += grad[i] * grad[i]
    if norm0 <= 0.0:
        return 0, norm0, norm0
    threshold = eps * norm0
    norm_k = norm0
    iterations = 0
    while iterations < max_inner:
        moved = False
        # exact line search over the passive set
        nsq = 0.0
        for i in range(r):
            if y[i] > 0.0 or grad[i] < 0.0:
                d[i] = grad[i]
                nsq += d[i] * d[i]
            else:
                d[i] = 0.0
        if nsq > 0.0:
            curv = 0.0
            for i in range(r):
                acc = 0.0
                for j in range(r):
                    acc += Q[i, j] * d[j]
                qd[i] = acc
                curv += d[i] * acc
            alpha = nsq / curv if curv > 0.0 else 1.0
            clamped = False
            for i in range(r):
                v = y[i] - alpha * d[i]
                if v < 0.0:
                    clamped = True
                    v = 0.0
                ynew[i] = v
                delta[i] = v - y[i]
            if not clamped:
                # the free step: Q delta is just -alpha Q d, already computed
                df = 0.0
                for i in range(r):
                    qd[i] = -alpha * qd[i]
                    df += grad[i] * delta[i] + 0.5 * delta[i] * qd[i]
            else:
                df = _take_step(Q, y, grad, d, alpha, ynew, delta, qd)
                if df > 0.0:
                    alpha_bp = np.inf
                    for i in range(r):
                        if d[i] > 0.0 and y[i] > 0.0:
                            c = y[i] / d[i]
                            if c < alpha_bp:
                                alpha_bp = c
                    if alpha_bp < alpha:
                        _take_step(Q, y, grad, d, alpha_bp, ynew, delta, qd)
            for i in range(r):
                if delta[i] != 0.0:
                    moved = True
                y[i] = ynew[i]
                grad[i] += qd[i]
        # greedy coordinate descent, r updates; the gradient update for the
        # chosen coordinate is fused into the next selection scan
        pending_p = -1
        pending_dx = 0.0
        for _ in range(r):
            best = 0.0
            p = -1
            best_dx = 0.0
            for i in range(r):
                gi = grad[i]
                if pending_p >= 0:
                    gi += Q[i, pending_p] * pending_dx
                    grad[i] = gi
                dxi = max(y[i] - gi, 0.0) - y[i]
                dec = abs(gi * dxi + 0.5 * dxi * dxi)
                if dec > best:
                    best = dec
                    p = i
                    best_dx = dxi
            pending_p = -1
            if p < 0:
                break
            y[p] += best_dx
            moved = True
            pending_p = p
            pending_dx = best_dx
        if pending_p >= 0:
            for i in range(r):
                grad[i] += Q[i, pending_p] * pending_dx
        iterations += 1
        finite = True
        for i in range(r):
            if not (np.isfinite(y[i]) and np.isfinite(grad[i])):
                finite = False
                break
        if not finite:
            return -iterations, norm0, np.nan
        norm_k = 0.0
        for i in range(r):
            if y[i] > 0.0 or grad[i] < 0.0:
                norm_k += grad[i] * grad[i]
        if norm_k <= threshold or norm_k <= max_stop:
            break
        if not moved:
            # stagnation: no representable progress left
            break
    return iterations, norm0, norm_k


@njit(nogil=True, cache=True)
def _take_step(Q, y, grad, d, alpha, ynew, delta, qd):
    """Projected step y -> [y - alpha d]+; fills ynew, delta, qd = Q delta.

    Returns the exact objective change for this step.
    """
    r = y.shape[0]
    for i in range(r):
        v = y[i] - alpha * d[i]
        if v < 0.0:
            v = 0.0
        ynew[i] = v
        delta[i] = v - y[i]
        qd[i] = 0.0
    for j in range(r):
        dj = delta[j]
        if dj != 0.0:
            for i in range(r):
                qd[i] += Q[i, j] * dj
    df = 0.0
    for i in range(r):
        df += grad[i] * delta[i] + 0.5 * delta[i] * qd[i]
    return df


@njit(nogil=True, cache=True)
def _coefficient_solve(hbuf, act_idx, active, scale_a, Qa,
                       warm, y, grad, q, d, ynew, delta, qd,
                       eps, max_stop, max_inner, x_full):
    """Common per-column tail: short-circuit, frozen check, compact solve.

    Returns (iterations, final_norm_sq); iterations < 0 flags failure
    (NaN inside the solve, or an unbounded frozen dimension).
    """
    r_full = hbuf.shape[0]
    ra = act_idx.shape[0]
    all_nonneg = True
    for i in range(r_full):
        if hbuf[i] < 0.0:
            all_nonneg = False
            break
    if all_nonneg:
        # the origin is the exact optimum
        for i in range(r_full):
            x_full[i] = 0.0
        return 0, 0.0
    for i in range(r_full):
        if not active[i] and hbuf[i] < 0.0:
            return -1, np.nan
    for k in range(ra):
        i = act_idx[k]
        q[k] = hbuf[i] / scale_a[k]
        y[k] = warm[i] * scale_a[k]
    for k in range(ra):
        acc = q[k]
        for j in range(ra):
            acc += Qa[k, j] * y[j]
        grad[k] = acc
    iters, _, norm_k = _solve_rescaled(
        Qa, q, y, grad, eps, max_stop, max_inner, d, ynew, delta, qd
    )
    if iters < 0:
        return iters, np.nan
    for i in range(r_full):
        x_full[i] = 0.0
    for k in range(ra):
        x_full[act_idx[k]] = y[k] / scale_a[k]
    return iters, norm_k


@njit(nogil=True, cache=True)
def estep_sparse(indptr, rowidx, vals, col_lo, col_hi, G, Qa, scale_a,
                 act_idx, active, mu1, eps, max_inner, max_stop0, FT, YT, HP):
    """Solve coefficient columns [col_lo, col_hi) of a sparse data matrix.

    Reads warm starts from FT rows and overwrites them with the solutions;
    accumulates the rank-one terms into YT and HP (worker-private buffers).
    Returns (total_inner_iterations, max_stop, fail_column).
    """
    r_full = FT.shape[1]
    ra = act_idx.shape[0]
    hbuf = np.empty(r_full)
    x_full = np.empty(r_full)
    warm = np.empty(r_full)
    y = np.empty(ra)
    grad = np.empty(ra)
    q = np.empty(ra)
    d = np.empty(ra)
    ynew = np.empty(ra)
    delta = np.empty(ra)
    qd = np.empty(ra)
    inner_total = 0
    max_stop = max_stop0
    for col in range(col_lo, col_hi):
        if col % FASTBREAK_BLOCK == 0:
            max_stop = 0.0
        p0 = indptr[col]
        p1 = indptr[col + 1]
        for i in range(r_full):
            hbuf[i] = mu1
            warm[i] = FT[col, i]
        for t in range(p0, p1):
            row = rowidx[t]
            v = vals[t]
            for i in range(r_full):
                hbuf[i] -= G[row, i] * v
        iters, norm_k = _coefficient_solve(
            hbuf, act_idx, active, scale_a, Qa, warm,
            y, grad, q, d, ynew, delta, qd, eps, max_stop, max_inner, x_full,
        )
        if iters < 0:
            return inner_total, max_stop, col
        inner_total += iters
        if norm_k > max_stop:
            max_stop = norm_k
        for i in range(r_full):
            FT[col, i] = x_full[i]
        for t in range(p0, p1):
            row = rowidx[t]
            v = vals[t]
            for i in range(r_full):
                YT[row, i] += x_full[i] * v
        # upper triangle only; mirrored once per shard by the caller
        for a in range(r_full):
            xa = x_full[a]
            if xa != 0.0:
                for b in range(a, r_full):
                    HP[a, b] += xa * x_full[b]
    return inner_total, max_stop, FAIL_NONE


@njit(nogil=True, cache=True)
def estep_dense(VT, col_lo, col_hi, G, Qa, scale_a,
                act_idx, active, mu1, eps, max_inner, max_stop0, FT, YT, HP):
    """Dense-data variant of estep_sparse; VT is (m, n) C-contiguous."""
    n = VT.shape[1]
    r_full = FT.shape[1]
    ra = act_idx.shape[0]
    hbuf = np.empty(r_full)
    x_full = np.empty(r_full)
    warm = np.empty(r_full)
    y = np.empty(ra)
    grad = np.empty(ra)
    q = np.empty(ra)
    d = np.empty(ra)
    ynew = np.empty(ra)
    delta = np.empty(ra)
    qd = np.empty(ra)
    inner_total = 0
    max_stop = max_stop0
    for col in range(col_lo, col_hi):
        if col % FASTBREAK_BLOCK == 0:
            max_stop = 0.0
        for i in range(r_full):
            hbuf[i] = mu1
            warm[i] = FT[col, i]
        for row in range(n):
            v = VT[col, row]
            if v != 0.0:
                for i in range(r_full):
                    hbuf[i] -= G[row, i] * v
        iters, norm_k = _coefficient_solve(
            hbuf, act_idx, active, scale_a, Qa, warm,
            y, grad, q, d, ynew, delta, qd, eps, max_stop, max_inner, x_full,
        )
        if iters < 0:
            return inner_total, max_stop, col
        inner_total += iters
        if norm_k > max_stop:
            max_stop = norm_k
        for i in range(r_full):
            FT[col, i] = x_full[i]
        for row in range(n):
            v = VT[col, row]
            if v != 0.0:
                for i in range(r_full):
                    YT[row, i] += x_full[i] * v
        # upper triangle only; mirrored once per shard by the caller
        for a in range(r_full):
            xa = x_full[a]
            if xa != 0.0:
                for b in range(a, r_full):
                    HP[a, b] += xa * x_full[b]
    return inner_total, max_stop, FAIL_NONE


@njit(nogil=True, cache=True)
def mstep_rows(YT, row_lo, row_hi, Qa, scale_a, act_idx, active,
               beta1, eps, max_inner, max_stop0, G):
    """Solve component rows [row_lo, row_hi) given the accumulated YT.

    Writes solutions into the matching rows of G (n, r).
    Returns (total_inner_iterations, max_stop, fail_row).
    """
    r_full = G.shape[1]
    ra = act_idx.shape[0]
    hbuf = np.empty(r_full)
    x_full = np.empty(r_full)
    warm = np.empty(r_full)
    y = np.empty(ra)
    grad = np.empty(ra)
    q = np.empty(ra)
    d = np.empty(ra)
    ynew = np.empty(ra)
    delta = np.empty(ra)
    qd = np.empty(ra)
    inner_total = 0
    max_stop = max_stop0
    for row in range(row_lo, row_hi):
        if row % FASTBREAK_BLOCK == 0:
            max_stop = 0.0
        for i in range(r_full):
            hbuf[i] = beta1 - YT[row, i]
            warm[i] = G[row, i]
        iters, norm_k = _coefficient_solve(
            hbuf, act_idx, active, scale_a, Qa, warm,
            y, grad, q, d, ynew, delta, qd, eps, max_stop, max_inner, x_full,
        )
        if iters < 0:
            return inner_total, max_stop, row
        inner_total += iters
        if norm_k > max_stop:
            max_stop = norm_k
        for i in range(r_full):
            G[row, i] = x_full[i]
    return inner_total, max_stop, FAIL_NONE
