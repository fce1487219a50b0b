"""Finite-dimensional weight subproblems for spike adjustment.

Two convex objectives appear, both over nonnegative weight vectors: a
quadratic form plus weighted l1 (solved by semismooth Newton with a
forward-backward fallback), and an l1-squared proximal variant (solved by
proximal-point iteration on an exact sort-based prox).  Solutions are
certified by the smallest max-norm subgradient, which must fall below
``accuracy / (1 + ||beta||_1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "WeightProblemD",
    "WeightProblemRadon",
    "WeightSolution",
    "solve_weights_d",
    "solve_weights_radon",
    "prox_l1sq_l1_pos",
    "residual_weights_d",
    "residual_weights_radon",
]


@dataclass(frozen=True)
class WeightProblemD:
    """min over beta >= 0 of ``0.5 <beta, D beta> + <eta, beta> + reg ||beta||_1``."""

    D: np.ndarray
    eta: np.ndarray
    reg: float
    accuracy: float

    def objective(self, beta: np.ndarray) -> float:
        return float(
            0.5 * beta @ self.D @ beta
            + self.eta @ beta
            + self.reg * np.sum(np.abs(beta))
        )


@dataclass(frozen=True)
class WeightProblemRadon:
    """min over beta >= 0 of
    ``0.5 ||beta - alpha_vec||_1^2 + <eta, beta> + reg ||beta||_1``."""

    alpha_vec: np.ndarray
    eta: np.ndarray
    reg: float
    accuracy: float

    def objective(self, beta: np.ndarray) -> float:
        return float(
            0.5 * np.sum(np.abs(beta - self.alpha_vec)) ** 2
            + self.eta @ beta
            + self.reg * np.sum(np.abs(beta))
        )


@dataclass(frozen=True)
class WeightSolution:
    beta: np.ndarray
    residual: float
    iterations: int
    fallback_used: bool
    converged: bool


def residual_weights_d(
    D: np.ndarray, eta: np.ndarray, reg: float, beta: np.ndarray
) -> float:
    """Smallest max-norm element of the subdifferential at ``beta``.

    At positive coordinates the subgradient is unique; at zero coordinates
    the normal cone absorbs anything nonpositive, leaving the violation
    ``max(0, -(D beta + eta + reg))``.
    """
    if beta.size == 0:
        return 0.0
    g = D @ beta + eta + reg
    pos = beta > 0
    per_coord = np.where(pos, np.abs(g), np.maximum(0.0, -g))
    return float(np.max(per_coord))


def _target_tol(accuracy: float, beta: np.ndarray) -> float:
    return accuracy / (1.0 + float(np.sum(np.abs(beta))))


def _solve_psd(sub: np.ndarray, rhs: np.ndarray) -> np.ndarray | None:
    try:
        sol = np.linalg.solve(sub, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(sub, rhs, rcond=None)[0]
    if not np.all(np.isfinite(sol)):
        return None
    return sol


def solve_weights_d(
    problem: WeightProblemD,
    beta0: np.ndarray | None = None,
    max_outer: int = 400,
    max_fallback: int = 4000,
) -> WeightSolution:
    """Active-set Newton solve of the nonnegativity-clamped optimality system.

    A warm-started Lawson-Hanson style iteration: solve the unconstrained
    Newton system on the working set, step back along the segment when
    components leave the feasible region (dropping them from the set), and
    admit the worst KKT violator among the clamped coordinates.  The vertex
    solutions this produces keep redundant nearly-duplicate columns at
    weight zero.  Falls back to monotone forward-backward splitting when
    the working-set iteration stalls on a singular system.
    """
    D, eta, reg = problem.D, problem.eta, problem.reg
    n = eta.size
    if n == 0:
        return WeightSolution(np.zeros(0), 0.0, 0, False, True)
    q = eta + reg
    beta = np.zeros(n) if beta0 is None else np.maximum(np.asarray(beta0, float), 0.0)
    if problem.objective(beta) > 0.0:
        beta = np.zeros(n)
    active = beta > 0
    iterations = 0
    fallback = False

    for _ in range(max_outer):
        resid = residual_weights_d(D, eta, reg, beta)
        if resid <= _target_tol(problem.accuracy, beta):
            return WeightSolution(beta, resid, iterations, fallback, True)
        iterations += 1
        g = D @ beta + q
        entering = np.where(~active & (g < 0), -g, 0.0)
        if not active.any() and not entering.any():
            break
        if entering.any():
            active[int(np.argmax(entering))] = True
        # inner loop: restore feasibility on the working set
        ok = True
        for _ in range(2 * n + 8):
            idx = np.flatnonzero(active)
            sol = _solve_psd(D[np.ix_(idx, idx)], -q[idx])
            if sol is None:
                ok = False
                break
            if np.all(sol > 0.0):
                beta = np.zeros(n)
                beta[idx] = sol
                break
            cand = np.zeros(n)
            cand[idx] = sol
            blocking = (cand < 0.0) & active & (beta > cand)
            if not blocking.any():
                # only zero-weight coordinates came out nonpositive: drop them
                active &= cand > 0.0
                beta = np.maximum(cand, 0.0)
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = beta / (beta - cand)
            steps = np.where(blocking, steps, np.inf)
            t = float(np.min(steps))
            beta = np.maximum(beta + min(t, 1.0) * (cand - beta), 0.0)
            beta[steps <= t] = 0.0
            active &= beta > 0.0
            if not active.any():
                break
        if not ok:
            break

    # forward-backward fallback; the objective is monotone along these
    # steps, and stagnation exits early
    fallback = True
    lam_max = float(np.max(np.linalg.eigvalsh(0.5 * (D + D.T)))) if n else 1.0
    step = 1.0 / max(lam_max, 1e-12)
    check_every = 50
    prev_resid = residual_weights_d(D, eta, reg, beta)
    for it in range(max_fallback):
        beta = np.maximum(0.0, beta - step * (D @ beta + q))
        iterations += 1
        if (it + 1) % check_every == 0:
            resid = residual_weights_d(D, eta, reg, beta)
            if resid <= _target_tol(problem.accuracy, beta):
                return WeightSolution(beta, resid, iterations, fallback, True)
            if resid >= 0.95 * prev_resid:
                break
            prev_resid = resid
    resid = residual_weights_d(D, eta, reg, beta)
    return WeightSolution(
        beta, resid, iterations, fallback,
        resid <= _target_tol(problem.accuracy, beta),
    )


def prox_l1sq_l1_pos(
    alpha_vec: np.ndarray, point: np.ndarray, a: float = 1.0, c: float = 0.0
) -> np.ndarray:
    """Exact prox of ``(a/2) ||. - alpha_vec||_1^2 + c ||.||_1 + positivity``.

    Reduces to the scalar fixed point ``t = ||beta(t) - alpha_vec||_1`` where
    ``beta(t) = max(0, alpha_vec + shrink(point - c - alpha_vec, a t))``; the
    right-hand side is piecewise linear and nonincreasing in ``t``, so the
    crossing is located exactly by sorting its breakpoints.
    """
    alpha_vec = np.asarray(alpha_vec, dtype=float)
    v = np.asarray(point, dtype=float)
    if a < 0 or c < 0:
        raise ValueError("weights must be nonnegative")
    u = v - c
    if a == 0.0:
        return np.maximum(0.0, u)
    s = u - alpha_vec

    def beta_of(t: float) -> np.ndarray:
        shrunk = np.sign(s) * np.maximum(np.abs(s) - a * t, 0.0)
        return np.maximum(0.0, alpha_vec + shrunk)

    def g_of(t: float) -> float:
        return float(np.sum(np.abs(beta_of(t) - alpha_vec)))

    kinks = [np.abs(s) / a]
    down = (s < 0) & (u < 0)
    if np.any(down):
        kinks.append(-u[down] / a)
    ts = np.unique(np.concatenate([np.concatenate(kinks), [0.0]]))
    ts = ts[ts >= 0.0]
    t_star = None
    lo_t, lo_h = 0.0, 0.0 - g_of(0.0)
    if lo_h >= 0:
        t_star = 0.0
    else:
        for t in ts[ts > 0]:
            h = t - g_of(t)
            if h >= 0:
                # linear crossing inside (lo_t, t]
                frac = lo_h / (lo_h - h) if h != lo_h else 1.0
                t_star = lo_t + frac * (t - lo_t)
                break
            lo_t, lo_h = t, h
        if t_star is None:
            # beyond the last kink g is constant: t = g(last)
            t_star = g_of(float(ts[-1]) if ts.size else 0.0)
    return beta_of(float(t_star))


def residual_weights_radon(
    alpha_vec: np.ndarray, eta: np.ndarray, reg: float, beta: np.ndarray
) -> float:
    """Smallest max-norm subgradient of the l1-squared objective at ``beta``.

    Coordinatewise the subdifferential is an interval (half-line at zero
    coordinates); the residual is the largest distance from zero to it.
    """
    if beta.size == 0:
        return 0.0
    t = float(np.sum(np.abs(beta - alpha_vec)))
    diff = beta - alpha_vec
    lo1 = np.where(diff != 0, t * np.sign(diff), -t)
    hi1 = np.where(diff != 0, t * np.sign(diff), t)
    pos = beta > 0
    lo2 = np.where(pos, reg, -reg)
    hi2 = np.full_like(beta, reg)
    lo = eta + lo1 + lo2
    hi = eta + hi1 + hi2
    lo = np.where(pos, lo, -np.inf)
    per_coord = np.maximum(0.0, np.maximum(lo, -hi))
    return float(np.max(per_coord))


def solve_weights_radon(
    problem: WeightProblemRadon,
    beta0: np.ndarray | None = None,
    max_iter: int = 200,
    prox_weight: float = 4.0,
) -> WeightSolution:
    """Proximal-point iteration with the exact l1-squared prox.

    Each sweep applies the prox of the full objective with an increasing
    proximal weight, which is the degenerate (no dual variable) form of a
    primal-dual splitting for this subproblem; the exact prox makes each
    sweep cheap and the residual certificate decides termination.
    """
    alpha_vec, eta, reg = problem.alpha_vec, problem.eta, problem.reg
    n = eta.size
    if n == 0:
        return WeightSolution(np.zeros(0), 0.0, 0, False, True)
    beta = alpha_vec.copy() if beta0 is None else np.maximum(np.asarray(beta0, float), 0)
    s = prox_weight
    iterations = 0
    for _ in range(max_iter):
        resid = residual_weights_radon(alpha_vec, eta, reg, beta)
        if resid <= _target_tol(problem.accuracy, beta):
            return WeightSolution(beta, resid, iterations, False, True)
        iterations += 1
        beta = prox_l1sq_l1_pos(alpha_vec, beta - s * eta, a=s, c=s * reg)
        s = min(s * 4.0, 1e12)
    resid = residual_weights_radon(alpha_vec, eta, reg, beta)
    return WeightSolution(
        beta, resid, iterations, False,
        resid <= _target_tol(problem.accuracy, beta),
    )
