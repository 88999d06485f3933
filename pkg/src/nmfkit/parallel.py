"""Partitioned execution of the alternation steps.

The coefficient step shards data columns across workers and the component
step shards features; workers run concurrently on threads (the compiled
shard kernels release the GIL) with no shared mutable state. Each worker
owns a private rank-one accumulator pair sized r x (r + n) reals, and the
partial results are summed in ascending worker order so a run is
reproducible for a fixed worker count. Shards are aligned to the solver's
fast-break blocks, so the subproblem solutions themselves are identical for
every worker count and only the merge rounding can differ. This in-process
shard/merge boundary is exactly where a distributed transport would slot
in; none is provided.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import MatrixSizeError, NumericalFailureError
from .matrix import DenseMatrix, SparseMatrix
from .nqp import StopState, rescale_arrays

# Distribute the component step only when its work amortizes the fan-out.
MSTEP_DISTRIBUTE_FLOPS = 10_000_000


@dataclass
class WorkerPlan:
    """Contiguous shard bounds over [0, total); reduction follows list order."""

    workers: int
    shards: list[tuple[int, int]]

    @property
    def sizes(self):
        return [hi - lo for lo, hi in self.shards]


@dataclass
class WorkerAccumulator:
    """Per-worker state: rank-one accumulators plus stopping bookkeeping.

    ``Y_part`` is logically r x n and stored Fortran-ordered so the kernels
    can update it as contiguous (n, r) rows; ``owned_reals`` is the
    instrumented footprint of the buffers the worker allocates.
    """

    worker_index: int
    Y_part: np.ndarray
    H_part: np.ndarray
    stop: StopState
    inner_iterations: int = 0
    workspace_reals: int = 0

    @classmethod
    def allocate(cls, worker_index, r, n, epsilon):
        return cls(
            worker_index=worker_index,
            Y_part=np.zeros((r, n), order="F"),
            H_part=np.zeros((r, r)),
            stop=StopState(epsilon=epsilon),
        )

    def owned_reals(self):
        return self.Y_part.size + self.H_part.size + self.workspace_reals


def plan(total, workers):
    """Near-equal contiguous shards; sizes differ by at most one."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    workers = min(workers, total) if total > 0 else 1
    base, extra = divmod(total, workers)
    shards = []
    lo = 0
    for w in range(workers):
        hi = lo + base + (1 if w < extra else 0)
        shards.append((lo, hi))
        lo = hi
    return WorkerPlan(workers=workers, shards=shards)


def _rescale_for_step(H):
    scale, active, Q = rescale_arrays(H)
    idx = np.flatnonzero(active)
    Qa = np.ascontiguousarray(Q[np.ix_(idx, idx)])
    return scale[idx].copy(), active, idx.astype(np.int64), Qa


def map_estep(shard, V, G, Q_g, cfg, F):
    """Solve one shard of coefficient columns; returns the worker accumulator.

    ``G`` is the (n, r) component array, ``Q_g`` its Gram matrix, ``F`` the
    (m, r) transposed coefficient array holding warm starts that are
    overwritten in place (shards own disjoint rows of it).
    """
    lo, hi = shard
    n, r = G.shape
    acc = WorkerAccumulator.allocate(0, r, n, cfg.epsilon)
    H = Q_g + (2.0 * cfg.mu2) * np.eye(r)
    scale_a, active, act_idx, Qa = _rescale_for_step(H)
    # solver workspaces: a dozen length-r scratch vectors inside the kernel
    acc.workspace_reals = 12 * r
    yt = acc.Y_part.T  # (n, r) C-contiguous view of the same buffer
    if isinstance(V, SparseMatrix):
        inner, max_stop, fail = kernels.estep_sparse(
            V.indptr, V.indices, V.values, lo, hi, G, Qa, scale_a,
            act_idx, active, cfg.mu1, cfg.epsilon, cfg.inner_cap,
            acc.stop.max_stop, F, yt, acc.H_part,
        )
    else:
        vt = V if isinstance(V, np.ndarray) else V.array.T
        inner, max_stop, fail = kernels.estep_dense(
            vt, lo, hi, G, Qa, scale_a,
            act_idx, active, cfg.mu1, cfg.epsilon, cfg.inner_cap,
            acc.stop.max_stop, F, yt, acc.H_part,
        )
    if fail != kernels.FAIL_NONE:
        raise NumericalFailureError(
            f"coefficient solve failed at column {fail}", index=int(fail)
        )
    # the kernel fills the upper triangle of the Gram accumulator only
    upper = np.triu(acc.H_part)
    acc.H_part[:] = upper + upper.T - np.diag(np.diag(upper))
    acc.inner_iterations = int(inner)
    acc.stop.max_stop = float(max_stop)
    return acc


@dataclass
class StepStats:
    inner_iterations: int = 0
    workers: int = 1
    peak_worker_reals: int = 0


def reduce(parts):
    """Sum worker accumulators in ascending worker order."""
    if not parts:
        raise MatrixSizeError("nothing to reduce")
    shape_y = parts[0].Y_part.shape
    shape_h = parts[0].H_part.shape
    for p in parts:
        if p.Y_part.shape != shape_y or p.H_part.shape != shape_h:
            raise MatrixSizeError("accumulator shapes differ across workers")
    parts = sorted(parts, key=lambda p: p.worker_index)
    y = np.zeros(shape_y, order="F")
    h = np.zeros(shape_h)
    stats = StepStats(workers=len(parts))
    for p in parts:
        y += p.Y_part
        h += p.H_part
        stats.inner_iterations += p.inner_iterations
        stats.peak_worker_reals = max(stats.peak_worker_reals, p.owned_reals())
    return DenseMatrix(y), DenseMatrix(h), stats


def block_plan(total, workers):
    """Shards aligned to the fast-break block size, so which subproblems
    share a fast-break scope never depends on the worker count."""
    block = kernels.FASTBREAK_BLOCK
    nblocks = max(-(-total // block), 1)
    wp = plan(nblocks, workers)
    shards = [(lo * block, min(hi * block, total)) for lo, hi in wp.shards]
    return WorkerPlan(workers=wp.workers, shards=shards)


def run_estep(V, G, Q_g, cfg, F):
    """Shard the coefficient step across cfg.workers and merge the results."""
    m = F.shape[0]
    wp = block_plan(m, cfg.workers)
    if wp.workers == 1:
        parts = [map_estep(wp.shards[0], V, G, Q_g, cfg, F)]
    else:
        def work(w):
            acc = map_estep(wp.shards[w], V, G, Q_g, cfg, F)
            acc.worker_index = w
            return acc

        with ThreadPoolExecutor(max_workers=wp.workers) as pool:
            parts = list(pool.map(work, range(wp.workers)))
    return reduce(parts)


def run_mstep(Y, H_f, cfg, G):
    """Solve all component rows given the accumulated Y and H_f.

    Distributed through the same shard harness only when the step is big
    enough for the fan-out to pay; returns aggregate statistics.
    """
    n, r = G.shape
    H = H_f.array + (2.0 * cfg.beta2) * np.eye(r)
    scale_a, active, act_idx, Qa = _rescale_for_step(H)
    yt = Y.array.T
    if not yt.flags["C_CONTIGUOUS"]:
        yt = np.ascontiguousarray(yt)
    workers = cfg.workers if n * r * r > MSTEP_DISTRIBUTE_FLOPS else 1
    wp = block_plan(n, workers)

    def work(w):
        lo, hi = wp.shards[w]
        inner, _, fail = kernels.mstep_rows(
            yt, lo, hi, Qa, scale_a, act_idx, active,
            cfg.beta1, cfg.epsilon, cfg.inner_cap, 0.0, G,
        )
        if fail != kernels.FAIL_NONE:
            raise NumericalFailureError(
                f"component solve failed at row {fail}", index=int(fail)
            )
        return int(inner)

    if wp.workers == 1:
        inners = [work(0)]
    else:
        with ThreadPoolExecutor(max_workers=wp.workers) as pool:
            inners = list(pool.map(work, range(wp.workers)))
    stats = StepStats(inner_iterations=sum(inners), workers=wp.workers)
    stats.peak_worker_reals = 12 * r
    return stats
