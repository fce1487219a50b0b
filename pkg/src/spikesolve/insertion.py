"""Spike insertion with weight adjustment: the marginal proximal step.

Two variants: the convolution-seminorm marginal term couples weights
through a kernel Gram matrix and repeatedly inserts global minimisers of
the running certificate until a certified stopping bound holds; the
Radon-squared marginal term inserts a single candidate and solves one
l1-squared weight problem.  Both accept an optional cap on insertions used
by the bootstrap heuristic of the outer loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bnb import BnBResult, BnBTask, bnb_minimize
from .kernels import CertificateFunction, SeparableKernel
from .measures import DEDUP_RTOL, DiscreteMeasure, Domain
from .parallel import WorkerPool
from .weights import (
    WeightProblemD,
    WeightProblemRadon,
    solve_weights_d,
    solve_weights_radon,
)

__all__ = ["InsertionResult", "insert_and_adjust", "insert_and_adjust_radon", "kernel_gram"]


def kernel_gram(kernel: SeparableKernel, points: np.ndarray) -> np.ndarray:
    """Symmetric Gram matrix ``k(x_i - x_j)`` for a set of points."""
    pts = np.asarray(points, dtype=float)
    k = pts.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    diffs = pts[:, None, :] - pts[None, :, :]
    return kernel.eval(diffs.reshape(-1, pts.shape[1])).reshape(k, k)


@dataclass
class InsertionResult:
    """Outcome of one insertion call, including its certified stopping data."""

    locations: np.ndarray
    weights: np.ndarray
    base_weights: np.ndarray
    inserted: int
    weight_iterations: int
    fallback_used: bool
    satisfied: bool
    certificate_bound: float
    stop_value: float
    bnb_evaluations: int
    eta_inf: float
    eps: float
    tau_alpha: float
    certificate: CertificateFunction | None

    def measure(self, domain: Domain, nonnegative: bool = True) -> DiscreteMeasure:
        return DiscreteMeasure(domain, self.locations, self.weights, nonnegative)


def insert_and_adjust(
    mudot: DiscreteMeasure,
    tau_vcheck: CertificateFunction,
    alpha: float,
    tau: float,
    eps: float,
    rho: SeparableKernel,
    kappa: float = 0.5,
    max_insertions: int | None = None,
    max_passes: int = 60,
    pool: WorkerPool | None = None,
    bnb_budget: int = 300_000,
) -> InsertionResult:
    """Insert spikes and re-optimise weights until the certificate holds.

    Alternates a nonnegative quadratic-plus-l1 weight solve on the current
    support with a certified global minimisation of
    ``tau vcheck + [D (mu - mudot)]``; a new location enters the support
    whenever the minimum value plus ``tau alpha`` is below ``-eps``.  The
    final certified lower bound (plus ``tau alpha``) is reported so that
    callers can replay the stopping test independently.
    """
    domain = mudot.domain
    dedup_tol = DEDUP_RTOL * domain.diameter
    S = mudot.locations.copy()
    beta_dot = mudot.weights.copy()
    beta = beta_dot.copy()
    tau_alpha = tau * alpha
    inserted = 0
    weight_iters = 0
    fallback = False
    bnb_evals = 0
    eta_inf = 0.0

    gram = kernel_gram(rho, S)
    tau_v_on_S = tau_vcheck.eval_many(S) if S.shape[0] else np.zeros(0)
    for _ in range(max_passes):
        if S.shape[0]:
            eta = tau_v_on_S - gram @ beta_dot
            eta_inf = float(np.max(np.abs(eta)))
            sol = solve_weights_d(
                WeightProblemD(gram, eta, tau_alpha, kappa * eps), beta0=beta
            )
            beta = sol.beta
            weight_iters += sol.iterations
            fallback = fallback or sol.fallback_used
        diff = beta - beta_dot
        if S.shape[0]:
            cert = tau_vcheck.extended(rho, S, diff)
        else:
            cert = tau_vcheck
        res = bnb_minimize(
            BnBTask(
                cert,
                domain.lower,
                domain.upper,
                tolerance=kappa * eps / 4.0,
                early_stop_above=-(eps + tau_alpha),
                budget=bnb_budget,
                seed_points=S if S.shape[0] else None,
            ),
            pool,
        )
        bnb_evals += res.evaluations
        stop_value = res.value + tau_alpha
        bound = res.lower_bound + tau_alpha
        if stop_value >= -eps:
            return InsertionResult(
                S, beta, beta_dot, inserted, weight_iters, fallback, True,
                bound, stop_value, bnb_evals, eta_inf, eps, tau_alpha, cert,
            )
        if max_insertions is not None and inserted >= max_insertions:
            return InsertionResult(
                S, beta, beta_dot, inserted, weight_iters, fallback, False,
                bound, stop_value, bnb_evals, eta_inf, eps, tau_alpha, cert,
            )
        xbar = res.point
        if S.shape[0] and float(np.min(np.linalg.norm(S - xbar, axis=1))) <= dedup_tol:
            # candidate coincides with an existing support point: the weight
            # residual already controls the certificate there, no progress
            return InsertionResult(
                S, beta, beta_dot, inserted, weight_iters, fallback, False,
                bound, stop_value, bnb_evals, eta_inf, eps, tau_alpha, cert,
            )
        if S.shape[0]:
            row = rho.eval(S - xbar[None, :])
            gram = np.block(
                [[gram, row[:, None]], [row[None, :], rho.eval(np.zeros((1, S.shape[1])))]]
            )
            S = np.vstack([S, xbar.reshape(1, -1)])
        else:
            S = xbar.reshape(1, -1)
            gram = rho.eval(np.zeros((1, S.shape[1]))).reshape(1, 1)
        tau_v_on_S = np.append(tau_v_on_S, tau_vcheck.eval(xbar))
        beta_dot = np.append(beta_dot, 0.0)
        beta = np.append(beta, 0.0)
        inserted += 1

    return InsertionResult(
        S, beta, beta_dot, inserted, weight_iters, fallback, False,
        float("nan"), float("nan"), bnb_evals, eta_inf, eps, tau_alpha, None,
    )


def insert_and_adjust_radon(
    mudot: DiscreteMeasure,
    tau_vcheck: CertificateFunction,
    alpha: float,
    tau: float,
    eps: float,
    kappa: float = 0.5,
    pool: WorkerPool | None = None,
    bnb_budget: int = 300_000,
) -> InsertionResult:
    """Single-candidate insertion for the Radon-squared marginal term.

    Finds one approximate global minimiser of the certificate, appends it to
    the support with zero weight, and solves the l1-squared weight problem;
    at most one new location per call.
    """
    domain = mudot.domain
    dedup_tol = DEDUP_RTOL * domain.diameter
    res = bnb_minimize(
        BnBTask(
            tau_vcheck,
            domain.lower,
            domain.upper,
            tolerance=max(kappa * eps / 4.0, 1e-13),
            budget=bnb_budget,
        ),
        pool,
    )
    S = mudot.locations.copy()
    beta_dot = mudot.weights.copy()
    inserted = 0
    xbar = res.point
    if S.shape[0] == 0 or float(np.min(np.linalg.norm(S - xbar, axis=1))) > dedup_tol:
        S = np.vstack([S, xbar.reshape(1, -1)]) if S.shape[0] else xbar.reshape(1, -1)
        beta_dot = np.append(beta_dot, 0.0)
        inserted = 1
    eta = tau_vcheck.eval_many(S)
    sol = solve_weights_radon(
        WeightProblemRadon(beta_dot, eta, tau * alpha, kappa * eps), beta0=beta_dot
    )
    return InsertionResult(
        S, sol.beta, beta_dot, inserted, sol.iterations, False, sol.converged,
        float("nan"), float("nan"), res.evaluations,
        float(np.max(np.abs(eta))) if eta.size else 0.0, eps, tau * alpha, None,
    )
