"""Global minimisation over a box by Lipschitz branch-and-bound.

Each box is scored by a certified lower bound built from its centre: the
centred Lipschitz cone ``value - L * radius``, sharpened by the curvature
cone ``value - |grad| * radius - H * radius^2 / 2`` whenever a Lipschitz
constant ``H`` of the gradient is available.  A best-first queue splits the
box with the smallest bound along its longest axis until the incumbent is
certified within tolerance, an early certification threshold is reached, or
the evaluation budget runs out.  Runs are deterministic for fixed inputs
and independent of the worker count: boxes are processed in fixed-size
batches and workers only parallelise the batch evaluation.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .parallel import WorkerPool

__all__ = ["BnBTask", "BnBResult", "bnb_minimize"]

_BATCH = 48


@dataclass(frozen=True)
class BnBTask:
    """Global optimisation task: vectorised objective with Lipschitz data."""

    objective: object  # exposes eval_many / lipschitz_bound, optionally
    # eval_and_gradnorm / grad_lipschitz_bound
    lower: np.ndarray
    upper: np.ndarray
    tolerance: float
    mode: str = "min"
    lipschitz: float | None = None
    lipschitz_grad: float | None = None
    early_stop_above: float | None = None
    budget: int = 400_000
    seed_points: np.ndarray | None = None  # likely minimisers, probed first


@dataclass(frozen=True)
class BnBResult:
    point: np.ndarray
    value: float
    lower_bound: float
    gap: float
    evaluations: int
    status: str  # "certified" | "threshold" | "budget"


def bnb_minimize(task: BnBTask, pool: WorkerPool | None = None) -> BnBResult:
    """Certified approximate global minimiser of the task objective.

    Returns a point whose value is within ``tolerance`` of the certified
    global lower bound, unless the early threshold fires first (the bound
    alone then suffices) or the budget is exhausted (the residual gap is
    reported).  For ``mode == "max"`` the negated objective is minimised
    and the sign restored, so ``lower_bound`` is then an upper bound.
    """
    if task.mode not in ("min", "max"):
        raise ValueError("mode must be 'min' or 'max'")
    sign = 1.0 if task.mode == "min" else -1.0
    lo = np.atleast_1d(np.asarray(task.lower, dtype=float))
    hi = np.atleast_1d(np.asarray(task.upper, dtype=float))
    L = task.lipschitz
    if L is None:
        L = task.objective.lipschitz_bound()
    H = task.lipschitz_grad
    if H is None and hasattr(task.objective, "grad_lipschitz_bound"):
        H = task.objective.grad_lipschitz_bound()
    use_grad = H is not None and hasattr(task.objective, "eval_and_gradnorm")
    threshold = task.early_stop_above
    if threshold is not None and task.mode == "max":
        raise ValueError("early_stop_above only supported in min mode")

    def evaluate(points: np.ndarray) -> np.ndarray:
        """Columns [value, gradnorm] (gradnorm zero when unused)."""
        if use_grad:
            fn = task.objective.eval_and_gradnorm
            out = pool.map_rows(fn, points) if pool else np.asarray(fn(points))
            out = np.array(out, dtype=float)
            out[:, 0] *= sign
            return out
        fn = task.objective.eval_many
        vals = pool.map_rows(lambda c: np.asarray(fn(c)), points) if pool else (
            np.asarray(fn(points))
        )
        return np.column_stack([sign * vals, np.zeros_like(vals)])

    def box_bounds(vals, gnorms, radii):
        cone = vals - L * radii
        if use_grad:
            curve = vals - gnorms * radii - 0.5 * H * radii**2
            return np.maximum(cone, curve)
        return cone

    center0 = 0.5 * (lo + hi)
    ev0 = evaluate(center0.reshape(1, -1))
    evaluations = 1
    radius0 = 0.5 * float(np.linalg.norm(hi - lo))
    best_val, best_pt = float(ev0[0, 0]), center0.copy()
    if task.seed_points is not None and task.seed_points.size:
        seeds = np.asarray(task.seed_points, dtype=float).reshape(-1, lo.size)
        seed_vals = evaluate(seeds)[:, 0]
        evaluations += seeds.shape[0]
        i_best = int(np.argmin(seed_vals))
        if seed_vals[i_best] < best_val:
            best_val, best_pt = float(seed_vals[i_best]), seeds[i_best].copy()
    lb0 = float(box_bounds(ev0[:, 0], ev0[:, 1], np.array([radius0]))[0])
    heap: list[tuple] = []
    seq = 0
    heapq.heappush(heap, (lb0, tuple(center0), seq, lo.copy(), hi.copy()))

    def finish(status: str) -> BnBResult:
        # boxes pruned with lb >= incumbent can never go below the final
        # incumbent, so min(best, heap top) stays a certified bound
        heap_lb = heap[0][0] if heap else np.inf
        lower_bound = min(best_val, heap_lb)
        return BnBResult(
            point=best_pt,
            value=sign * best_val,
            lower_bound=sign * lower_bound,
            gap=float(best_val - lower_bound),
            evaluations=evaluations,
            status=status,
        )

    while heap:
        top_lb = heap[0][0]
        if threshold is not None and min(top_lb, best_val) >= threshold:
            return finish("threshold")
        if best_val - top_lb <= task.tolerance:
            return finish("certified")
        if evaluations >= task.budget:
            return finish("budget")

        nb = min(_BATCH, len(heap))
        batch = [heapq.heappop(heap) for _ in range(nb)]
        blo = np.array([box[3] for box in batch])
        bhi = np.array([box[4] for box in batch])
        axes = np.argmax(bhi - blo, axis=1)
        rows = np.arange(nb)
        mids = 0.5 * (blo[rows, axes] + bhi[rows, axes])
        left_hi = bhi.copy()
        left_hi[rows, axes] = mids
        right_lo = blo.copy()
        right_lo[rows, axes] = mids
        clo = np.concatenate([blo, right_lo])
        chi = np.concatenate([left_hi, bhi])
        parent_lbs = np.concatenate([[box[0] for box in batch]] * 2)
        centers = 0.5 * (clo + chi)
        ev = evaluate(centers)
        evaluations += centers.shape[0]
        widths = chi - clo
        if widths.shape[1] == 1:
            radii = 0.5 * widths[:, 0]
        else:
            radii = 0.5 * np.sqrt(np.sum(widths * widths, axis=1))
        lbs = np.maximum(box_bounds(ev[:, 0], ev[:, 1], radii), parent_lbs)

        vals = ev[:, 0]
        batch_min = float(np.min(vals))
        if batch_min <= best_val:
            ties = np.flatnonzero(vals == batch_min)
            cand = min(tuple(centers[i]) for i in ties)
            if batch_min < best_val or cand < tuple(best_pt):
                best_val = batch_min
                best_pt = np.array(cand)

        keep = np.flatnonzero(lbs < best_val)
        lbs_list = lbs.tolist()
        keys = centers[keep].tolist()
        for pos, i in enumerate(keep.tolist()):
            seq += 1
            heapq.heappush(
                heap, (lbs_list[i], tuple(keys[pos]), seq, clo[i], chi[i])
            )
    return finish("certified")
