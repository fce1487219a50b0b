"""Outer solver loops: sliding forward-backward, primal-dual, and baselines.

All methods share one measure-update engine: an optional transport step
slides existing spikes along the negative certificate gradient (with
curvature and convexity controls deciding how much transport survives),
then the insertion subroutine restores the marginal optimality condition
to the current tolerance.  Non-sliding baselines run the same engine with
an empty transport plan; primal-dual variants append explicit background
and dual updates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .experiments import ExperimentData, method_params
from .forward import ModelConstants
from .gridops import (
    grad_h,
    grad_h_adjoint,
    grad_norm_sq_bound,
    project_cellwise_ball,
    tv_value,
)
from .insertion import InsertionResult, insert_and_adjust, insert_and_adjust_radon
from .kernels import CertificateFunction
from .measures import DEDUP_RTOL, DiscreteMeasure, Domain, TransportPlan
from .bnb import BnBTask, bnb_minimize
from .parallel import WorkerPool

__all__ = [
    "StepConfig",
    "ResolvedSteps",
    "ToleranceSchedule",
    "RunLog",
    "RunResult",
    "resolve_steps",
    "transport_step",
    "curvature_control",
    "convexity_control",
    "merge_spikes",
    "run_method",
    "METHOD_NAMES",
]

METHOD_NAMES = {
    "mufb": "μFB",
    "mupdps": "μPDPS",
    "fwf": "FWf",
    "sfb": "sFB",
    "radon2fb": "radon²FB",
    "radon2sfb": "radon²sFB",
    "spdps": "sPDPS",
    "fpdps": "fPDPS",
    "radon2spdps": "radon²sPDPS",
    "radon2fpdps": "radon²fPDPS",
}

_FB_FAMILY = {"mufb", "sfb", "radon2fb", "radon2sfb"}
_PDPS_FAMILY = {"spdps", "fpdps", "radon2spdps", "radon2fpdps"}
_RADON_MARGINAL = {"radon2fb", "radon2sfb", "radon2spdps", "radon2fpdps"}


@dataclass
class StepConfig:
    """Relative step factors and control parameters for one method."""

    tau0: float = 0.99
    theta0: float = 0.0
    sigma0: float | None = None
    sigma_p0: float | None = None
    sigma_d0: float | None = None
    kappa: float = 0.5
    c_con: float | None = None
    # free constant of the tolerance-tightening rule; larger values only
    # shrink the resulting remainder constant, and modest values keep the
    # tightened tolerances representable at this problem's mass scale
    c_tighten: float = 50.0
    ell: float = 0.0
    ell_r: float = 0.0
    merging: str = "none"
    bootstrap_iters: int = 10
    rho_reduction: float = 0.5
    experimental: bool = False


@dataclass(frozen=True)
class ResolvedSteps:
    """Absolute step lengths with the inequality values they satisfy."""

    tau: float
    sigma: float | None
    sigma_p: float | None
    sigma_d: float | None
    L_marginal: float
    checks: dict


class ToleranceSchedule:
    """Decreasing tolerances ``0.5 tau alpha / (1 + 0.2 k)^1.4``."""

    def __init__(self, tau_alpha: float, bootstrap_iters: int = 10):
        if tau_alpha <= 0:
            raise ValueError("tau * alpha must be positive")
        self.tau_alpha = tau_alpha
        self.bootstrap_iters = bootstrap_iters

    def __call__(self, k: int) -> float:
        return 0.5 * self.tau_alpha / (1.0 + 0.2 * k) ** 1.4


def resolve_steps(
    config: StepConfig,
    constants: ModelConstants,
    marginal: str,
    biased_dim: int | None = None,
) -> ResolvedSteps:
    """Turn relative step factors into absolute steps, verifying the
    step-length inequalities; raises on infeasible configurations.

    The marginal proximal metric decides the Lipschitz constant: the
    convolution seminorm uses the quadratic-form ratio bound, the Radon
    norm the operator norm squared.  Biased problems split the data-term
    smoothness between measure and background parts (Young with equal
    weights), and derive the dual step from the standard primal-dual
    condition on the remaining budget.
    """
    L_marg = constants.L if marginal == "d" else constants.norm_A_sq
    checks: dict = {}
    if biased_dim is None:
        tau = config.tau0 / L_marg
        checks["tau_L"] = tau * L_marg
        sigma = config.sigma0
        if sigma is not None:
            checks["tau_sigma_L"] = tau * sigma * L_marg
            if checks["tau_sigma_L"] > 1.0 + 1e-12:
                raise ValueError("infeasible-config: tau*sigma*L > 1")
        if checks["tau_L"] > 1.0 + 1e-12:
            raise ValueError("infeasible-config: tau*L > 1")
        return ResolvedSteps(tau, sigma, None, None, L_marg, checks)

    # biased problem: F(mu, z) = 0.5 ||A mu + z - b||^2, split with Young
    L0 = 2.0 * L_marg
    L_z = 2.0
    if config.sigma_p0 is None or config.sigma_d0 is None:
        raise ValueError("biased methods need sigma_p0 and sigma_d0")
    tau = config.tau0 / L0
    sigma_p = config.sigma_p0 / L_z
    if sigma_p * L_z >= 1.0:
        raise ValueError("infeasible-config: sigma_p * L_z >= 1")
    Kz_sq = grad_norm_sq_bound(biased_dim)
    sigma_d_max = (1.0 - sigma_p * L_z) / (sigma_p * Kz_sq)
    sigma_d = config.sigma_d0 * sigma_d_max
    beta = sigma_p * sigma_d * Kz_sq / (1.0 - sigma_p * L_z)
    checks["tau_L0"] = tau * L0
    checks["beta"] = beta
    checks["sigma_p_Lz"] = sigma_p * L_z
    # with no measure component in the coupling operator the remaining
    # condition is the transport inequality, enforced live via theta
    checks["coupling_M"] = 0.0
    if not (0.0 < beta < 1.0):
        raise ValueError("infeasible-config: no beta in (0,1) satisfies the PDPS system")
    if checks["tau_L0"] > 1.0 + 1e-12:
        raise ValueError("infeasible-config: tau*L0 > 1")
    return ResolvedSteps(tau, None, sigma_p, sigma_d, L_marg, checks)


def transport_step(
    mu: DiscreteMeasure, grads: np.ndarray, theta: float, tau: float
) -> TransportPlan:
    """One plan atom per spike, slid against the certificate gradient.

    Targets are ``x - theta tau sign(w) grad`` clamped to the domain; in
    nonnegative mode every sign is +1.
    """
    if mu.num_spikes == 0:
        return TransportPlan.empty(mu.domain)
    signs = np.ones(mu.num_spikes) if mu.nonnegative else np.sign(mu.weights)
    targets = mu.domain.clamp(
        mu.locations - theta * tau * signs[:, None] * grads
    )
    return TransportPlan(mu.domain, mu.locations, targets, mu.weights)


def curvature_control(
    gamma: TransportPlan,
    v_cert: CertificateFunction,
    ell_F: float,
    max_halvings: int = 20,
) -> tuple[TransportPlan, int]:
    """Reduce transported mass until the curvature bound holds.

    Enforces ``ell_F int c2 d|gamma| >= int B_v d gamma``, evaluating the
    Bregman divergence of the certificate along each atom directly; atoms
    whose excess persists are halved repeatedly and finally zeroed (the
    empty plan always satisfies the bound).
    """
    if gamma.num_atoms == 0:
        return gamma, 0
    disp = gamma.targets - gamma.sources
    c2 = 0.5 * np.sum(disp * disp, axis=1)
    moved = c2 > 0
    if not np.any(moved):
        return gamma, 0
    v_src = v_cert.eval_many(gamma.sources)
    v_tgt = v_cert.eval_many(gamma.targets)
    g_src = v_cert.grad_many(gamma.sources)
    breg = v_tgt - v_src - np.sum(g_src * disp, axis=1)
    masses = gamma.masses.copy()
    retries = 0
    for attempt in range(max_halvings + 1):
        lhs = float(np.sum(masses * breg))
        rhs = ell_F * float(np.sum(np.abs(masses) * c2))
        if lhs <= rhs + 1e-15 * (1.0 + abs(rhs)):
            break
        excess = masses * breg > ell_F * np.abs(masses) * c2
        if attempt == max_halvings or not np.any(excess):
            masses[moved] = 0.0
            break
        masses = np.where(excess, 0.5 * masses, masses)
        retries += 1
    if retries == 0 and np.array_equal(masses, gamma.masses):
        return gamma, 0
    return gamma.with_masses(masses), retries


def convexity_control(
    gamma: TransportPlan,
    delta_mass: float,
    c_con: float,
    eps: float,
    rho_reduction: float = 0.5,
) -> tuple[bool, TransportPlan]:
    """A-posteriori product bound ``||gamma|| * ||Delta|| <= c_con * eps``.

    Returns (accepted, plan); a rejected plan comes back with all masses
    scaled down, so repetition drives the transport to zero and the
    surrounding loop terminates.
    """
    if gamma.num_atoms == 0 or gamma.total_mass() * delta_mass <= c_con * eps:
        return True, gamma
    return False, gamma.with_masses(rho_reduction * gamma.masses)


def _parse_merging(policy: str) -> tuple[str, float]:
    if policy in ("none", "", None):
        return ("none", 0.0)
    kind, radius = policy.split(":")
    if kind not in ("i", "m"):
        raise ValueError(f"unknown merging policy {policy!r}")
    return (kind, float(radius))


def merge_spikes(
    mu: DiscreteMeasure,
    policy: str,
    objective_fn,
    gate_eps: float,
) -> tuple[DiscreteMeasure, int]:
    """Merge nearby spikes subject to an objective non-increase gate.

    ``i:r`` replaces a close pair by its mass-weighted centroid; ``m:r``
    moves the smaller spike's weight onto the larger.  A candidate merge is
    kept only when the objective does not increase beyond ``gate_eps``;
    total mass is preserved exactly either way.
    """
    kind, radius = _parse_merging(policy)
    if kind == "none" or mu.num_spikes < 2:
        return mu, 0
    merges = 0
    current = mu
    current_obj = objective_fn(current)
    while current.num_spikes >= 2:
        locs, w = current.locations, current.weights
        k = locs.shape[0]
        dists = np.linalg.norm(locs[:, None, :] - locs[None, :, :], axis=2)
        iu = np.triu_indices(k, 1)
        order = np.argsort(dists[iu], kind="stable")
        accepted = False
        for idx in order:
            i, j = iu[0][idx], iu[1][idx]
            if dists[i, j] > radius:
                break
            wi, wj = w[i], w[j]
            if wi + wj == 0:
                continue
            keep = np.ones(k, dtype=bool)
            keep[[i, j]] = False
            if kind == "i":
                new_loc = (wi * locs[i] + wj * locs[j]) / (wi + wj)
                new_loc = current.domain.clamp(new_loc.reshape(1, -1))[0]
                cand_locs = np.vstack([locs[keep], new_loc])
                cand_w = np.append(w[keep], wi + wj)
            else:
                big, small = (i, j) if abs(wi) >= abs(wj) else (j, i)
                cand_locs = np.vstack([locs[keep], locs[big]])
                cand_w = np.append(w[keep], wi + wj)
            cand = DiscreteMeasure(
                current.domain, cand_locs, cand_w, current.nonnegative
            ).prune()
            cand_obj = objective_fn(cand)
            if cand_obj <= current_obj + gate_eps:
                current, current_obj = cand, cand_obj
                merges += 1
                accepted = True
                break
        if not accepted:
            break
    return current, merges


@dataclass
class RunLog:
    """Per-iteration records; index 0 is the initial state."""

    values: list = field(default_factory=list)
    spike_counts: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    plan_masses: list = field(default_factory=list)
    curv_retries: list = field(default_factory=list)
    conv_retries: list = field(default_factory=list)
    cpu_times: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    cbar: list = field(default_factory=list)
    achieved_increase_ratio: list = field(default_factory=list)
    achieved_c_cur: list = field(default_factory=list)
    merge_events: int = 0
    insertion_records: list = field(default_factory=list)


@dataclass
class RunResult:
    method: str
    kind: str
    log: RunLog
    final_mu: DiscreteMeasure
    final_z: np.ndarray | None
    resolved: ResolvedSteps
    config: StepConfig
    wall_time: float


class _Driver:
    """Shared state and helpers for one method run."""

    def __init__(
        self,
        method: str,
        exp: ExperimentData,
        config: StepConfig,
        pool: WorkerPool | None,
        record_insertions: bool,
        bnb_budget: int,
    ):
        self.method = method
        self.exp = exp
        self.model = exp.model
        self.rho = exp.rho
        self.domain = exp.domain
        self.alpha = exp.alpha
        self.config = config
        self.pool = pool
        self.record_insertions = record_insertions
        self.bnb_budget = bnb_budget
        self.constants = exp.model.constants()
        self.marginal = "radon" if method in _RADON_MARGINAL else "d"
        self.biased = method in _PDPS_FAMILY
        if self.biased and not exp.is_biased:
            raise ValueError(f"{method} needs a biased experiment")
        biased_dim = exp.domain.dim if self.biased else None
        self.resolved = resolve_steps(config, self.constants, self.marginal, biased_dim)
        tau_for_schedule = 1.0 if method == "fwf" else self.resolved.tau
        self.schedule = ToleranceSchedule(
            tau_for_schedule * exp.alpha, config.bootstrap_iters
        )
        self.b = exp.observation.b
        self.grid_shape = exp.model.grid.counts
        self.mu = DiscreteMeasure.empty(self.domain, nonnegative=True)
        self.z = np.zeros(self.b.size) if self.biased else None
        self.y = (
            np.zeros(self.grid_shape + (self.domain.dim,)) if self.biased else None
        )
        self.y_dual = np.zeros(self.b.size) if method == "mupdps" else None
        self.gamma = TransportPlan.empty(self.domain)
        self.log = RunLog()

    # -- objective ---------------------------------------------------------

    def residual(self, mu: DiscreteMeasure, z: np.ndarray | None = None) -> np.ndarray:
        r = self.model.apply(mu) - self.b
        if self.biased:
            r = r + (self.z if z is None else z)
        return r

    def objective(self, mu: DiscreteMeasure, z: np.ndarray | None = None) -> float:
        r = self.residual(mu, z)
        val = 0.5 * float(r @ r) + self.alpha * float(np.sum(np.abs(mu.weights)))
        if self.biased:
            zz = self.z if z is None else z
            val += self.exp.lam * tv_value(zz, self.grid_shape)
        return val

    # -- shared measure update (Algorithm 3 lines 6..21) --------------------

    def _live_ell_F(self, resid_norm: float) -> float:
        c = self.constants
        return max(
            np.sqrt(2.0 * c.N_psi) * c.L_grad_psi * resid_norm, 1e-12
        )

    def _transported(self, mu: DiscreteMeasure, gamma: TransportPlan):
        """mu + (pi^1 - pi^0) gamma with an index map from plan atoms to
        support rows (sources are assumed aligned with mu's spikes)."""
        if gamma.num_atoms == 0:
            return mu, np.zeros(0, dtype=int)
        moved = (np.linalg.norm(gamma.targets - gamma.sources, axis=1) > 0) & (
            gamma.masses != 0
        )
        locs = np.vstack([mu.locations, gamma.targets[moved]])
        w = np.concatenate(
            [mu.weights - np.where(moved, gamma.masses, 0.0), gamma.masses[moved]]
        )
        tol = DEDUP_RTOL * self.domain.diameter
        pair_dist = np.linalg.norm(locs[:, None, :] - locs[None, :, :], axis=2)
        index_map = np.arange(locs.shape[0])
        for i in range(1, locs.shape[0]):
            close = np.flatnonzero(pair_dist[i, :i] <= tol)
            if close.size:
                index_map[i] = index_map[close[0]]
        reps = np.unique(index_map)
        compact = np.searchsorted(reps, index_map)
        uniq_locs_arr = locs[reps]
        uniq_w_arr = np.bincount(compact, weights=w, minlength=reps.size)
        index_map = compact
        uniq_w_arr = np.maximum(uniq_w_arr, 0.0)
        # plan atom j maps to its target's row: moved atoms map to appended
        # rows, diagonal atoms to their source row
        target_rows = index_map[: mu.num_spikes].copy()
        target_rows[moved] = index_map[mu.num_spikes:]
        # the support holds nonzero weights only; fully transported sources
        # drop out (their plan atoms point at the appended target rows)
        keep = uniq_w_arr != 0.0
        if not np.all(keep):
            remap = np.cumsum(keep) - 1
            uniq_locs_arr = uniq_locs_arr[keep]
            uniq_w_arr = uniq_w_arr[keep]
            target_rows = remap[target_rows]
        mudot = DiscreteMeasure(self.domain, uniq_locs_arr, uniq_w_arr, True)
        return mudot, target_rows

    def measure_update(self, k: int):
        """One outer measure update; returns bookkeeping for the logs."""
        eps_k = self.schedule(k)
        mu = self.mu
        resid0 = self.residual(mu)
        v_norm = float(np.linalg.norm(resid0))
        curv_retries = 0
        theta_k = 0.0
        if self.config.theta0 > 0 and mu.num_spikes:
            ell_F = self._live_ell_F(v_norm)
            denom = self.config.ell + self.config.ell_r + ell_F
            theta_k = self.config.theta0 / (self.resolved.tau * denom)
            grads = self.model.preadjoint_grad(resid0, mu.locations)
            gamma = transport_step(mu, grads, theta_k, self.resolved.tau)
            v_cert = self.model.preadjoint_certificate(resid0)
            gamma, curv_retries = curvature_control(gamma, v_cert, ell_F)
        else:
            gamma = TransportPlan.empty(self.domain)

        conv_retries = 0
        inner_iters = 0
        insertion: InsertionResult | None = None
        mudot = mu
        rhat = resid0
        for _ in range(40):
            mudot, target_rows = self._transported(mu, gamma)
            rhat = self.residual(mudot)
            tau_vcheck = self.model.preadjoint_certificate(
                rhat, scale=self.resolved.tau
            )
            gmass = gamma.total_mass()
            eps_bar = eps_k
            if gmass > 0:
                # tightened tolerance floored at the f64-achievable scale
                eps_bar = min(eps_k, self.config.c_tighten * eps_k**2 / gmass)
                eps_bar = max(eps_bar, 1e-9)
            cap = 1 if k < self.config.bootstrap_iters else None
            if self.marginal == "d":
                insertion = insert_and_adjust(
                    mudot,
                    tau_vcheck,
                    self.alpha,
                    self.resolved.tau,
                    self.config.kappa * eps_bar,
                    self.rho,
                    kappa=self.config.kappa,
                    max_insertions=cap,
                    pool=self.pool,
                    bnb_budget=self.bnb_budget,
                )
            else:
                insertion = insert_and_adjust_radon(
                    mudot,
                    tau_vcheck,
                    self.alpha,
                    self.resolved.tau,
                    self.config.kappa * eps_bar,
                    kappa=self.config.kappa,
                    pool=self.pool,
                    bnb_budget=self.bnb_budget,
                )
            inner_iters += insertion.weight_iterations
            if self.record_insertions:
                self.log.insertion_records.append((k, insertion))
            changed = False
            if gamma.num_atoms:
                # drop plan atoms whose target lost all weight
                masses = gamma.masses.copy()
                tgt_w = insertion.weights[target_rows]
                dead = (tgt_w == 0.0) & (masses != 0.0)
                if np.any(dead):
                    moved_dead = dead & (
                        np.linalg.norm(gamma.targets - gamma.sources, axis=1) > 0
                    )
                    masses[dead] = 0.0
                    gamma = gamma.with_masses(masses)
                    if np.any(moved_dead):
                        changed = True
                if self.config.c_con is not None and gamma.offdiagonal_mass() > 0:
                    r_con = self._convexity_error(gamma, insertion, rhat)
                    if r_con > self.config.c_con * eps_k:
                        conv_retries += 1
                        changed = True
                        if conv_retries >= 8:
                            gamma = gamma.with_masses(np.zeros_like(gamma.masses))
                        else:
                            gamma = gamma.with_masses(
                                self.config.rho_reduction * gamma.masses
                            )
            if not changed:
                break
        mu_new = insertion.measure(self.domain).prune()

        # achieved curvature-transport ratio for the logs
        c_cur = 0.0
        moved = (
            (np.linalg.norm(gamma.targets - gamma.sources, axis=1) > 0)
            & (gamma.masses != 0)
            if gamma.num_atoms
            else np.zeros(0, dtype=bool)
        )
        if np.any(moved):
            dres = resid0 - rhat
            dv_src = self.model.preadjoint_eval(dres, gamma.sources[moved])
            dv_tgt = self.model.preadjoint_eval(dres, gamma.targets[moved])
            r_cur = self.resolved.tau * float(
                np.sum(gamma.masses[moved] * (dv_src - dv_tgt))
            )
            c_cur = max(0.0, r_cur) / eps_k
        # logged quasi-monotonicity constant (descent-lemma style sum)
        c_prime = self._c_prime(gamma, rhat, insertion)
        cbar = (
            float(np.sum(np.abs(mu.weights)))
            + gamma.total_mass()
            + 1.0
            + c_prime
            + (self.config.c_con or 0.0)
            + c_cur
        ) / self.resolved.tau
        self.mu = mu_new
        self.gamma = gamma
        return {
            "eps": eps_k,
            "theta": theta_k,
            "curv_retries": curv_retries,
            "conv_retries": conv_retries,
            "inner_iters": inner_iters,
            "cbar": cbar,
            "c_cur": c_cur,
            "mudot": mudot,
            "rhat": rhat,
        }

    def _convexity_error(
        self, gamma: TransportPlan, insertion: InsertionResult, rhat: np.ndarray
    ) -> float:
        """Convexity transport error: the Bregman sum of the marginal-step
        mismatch ``D(mu_new - mudot) - tau [F'(mu_new) - F'(mudot)]`` along
        the plan, evaluated directly from the bump representation."""
        moved = (np.linalg.norm(gamma.targets - gamma.sources, axis=1) > 0) & (
            gamma.masses != 0
        )
        if not np.any(moved):
            return 0.0
        mu_new = insertion.measure(self.domain)
        r_new = self.residual(mu_new)
        cert = CertificateFunction(self.domain.dim)
        cert.add_group(
            self.rho, insertion.locations, insertion.weights - insertion.base_weights
        )
        z_w = -self.resolved.tau * (r_new - rhat)
        bound = float(np.linalg.norm(z_w)) * self.constants.preadjoint_grad_bound
        cert.add_group(self.model.grid.kernel, self.model.grid.centers, z_w, bound)
        src, tgt = gamma.sources[moved], gamma.targets[moved]
        g_src = cert.eval_many(src)
        g_tgt = cert.eval_many(tgt)
        grad_tgt = cert.grad_many(tgt)
        breg = g_src - g_tgt - np.sum(grad_tgt * (src - tgt), axis=1)
        return float(np.sum(gamma.masses[moved] * breg))

    def _c_prime(self, gamma, rhat, insertion) -> float:
        gmass = gamma.total_mass()
        if gmass == 0:
            return 2.0
        c = self.constants
        lip = self.resolved.tau * np.sqrt(2.0 * c.N_psi) * c.L_grad_psi * float(
            np.linalg.norm(rhat)
        ) + self.rho.lipschitz_grad * float(
            np.sum(np.abs(insertion.weights - insertion.base_weights))
        )
        return 2.0 * (
            1.0
            + self.domain.diameter
            * np.sqrt(gmass * lip / self.config.c_tighten)
        )

    # -- per-method steps ----------------------------------------------------

    def step_fb(self, k: int) -> dict:
        return self.measure_update(k)

    def step_mupdps(self, k: int) -> dict:
        eps_k = self.schedule(k)
        mu_prev = self.mu
        tau_vcheck = self.model.preadjoint_certificate(
            self.y_dual, scale=self.resolved.tau
        )
        cap = 1 if k < self.config.bootstrap_iters else None
        insertion = insert_and_adjust(
            mu_prev,
            tau_vcheck,
            self.alpha,
            self.resolved.tau,
            self.config.kappa * eps_k,
            self.rho,
            kappa=self.config.kappa,
            max_insertions=cap,
            pool=self.pool,
            bnb_budget=self.bnb_budget,
        )
        if self.record_insertions:
            self.log.insertion_records.append((k, insertion))
        mu_new = insertion.measure(self.domain).prune()
        sigma = self.resolved.sigma
        over = self.model.apply(mu_new.scaled(2.0)) - self.model.apply(mu_prev)
        self.y_dual = (self.y_dual + sigma * (over - self.b)) / (1.0 + sigma)
        self.mu = mu_new
        return {
            "eps": eps_k,
            "theta": 0.0,
            "curv_retries": 0,
            "conv_retries": 0,
            "inner_iters": insertion.weight_iterations,
            "cbar": float("nan"),
            "c_cur": 0.0,
        }

    def step_fwf(self, k: int) -> dict:
        eps_k = self.schedule(k)
        mu = self.mu
        resid = self.residual(mu)
        cert = self.model.preadjoint_certificate(resid)
        res = bnb_minimize(
            BnBTask(
                cert,
                self.domain.lower,
                self.domain.upper,
                tolerance=self.config.kappa * eps_k / 4.0,
                budget=self.bnb_budget,
            ),
            self.pool,
        )
        S = mu.locations
        w0 = mu.weights
        if res.value < -self.alpha:
            x = res.point.reshape(1, -1)
            S = np.vstack([S, x]) if S.shape[0] else x
            w0 = np.append(w0, 0.0)
        inner = 0
        if S.shape[0]:
            M = self.model.sensor_matrix(S)
            from .weights import WeightProblemD, solve_weights_d

            problem = WeightProblemD(
                M @ M.T, -(M @ self.b), self.alpha, self.config.kappa * eps_k
            )
            sol = solve_weights_d(problem, beta0=w0)
            inner = sol.iterations
            mu = DiscreteMeasure(self.domain, S, sol.beta, True).prune()
        self.mu = mu
        return {
            "eps": eps_k,
            "theta": 0.0,
            "curv_retries": 0,
            "conv_retries": 0,
            "inner_iters": inner,
            "cbar": float("nan"),
            "c_cur": 0.0,
        }

    def step_pdps(self, k: int) -> dict:
        info = self.measure_update(k)
        mudot = info["mudot"]
        sigma_p, sigma_d = self.resolved.sigma_p, self.resolved.sigma_d
        resid_check = self.model.apply(mudot) - self.b + self.z
        z_new = self.z - sigma_p * (
            resid_check + grad_h_adjoint(self.y, self.grid_shape)
        )
        drive = grad_h(2.0 * z_new - self.z, self.grid_shape)
        self.y = project_cellwise_ball(self.y + sigma_d * drive, self.exp.lam)
        self.z = z_new
        return info


def run_method(
    method: str,
    exp: ExperimentData,
    iters: int,
    config: StepConfig | None = None,
    pool: WorkerPool | None = None,
    record_insertions: bool = False,
    bnb_budget: int = 300_000,
    final_cleanup: bool = True,
) -> RunResult:
    """Run one method for a fixed iteration count, logging every iteration.

    The iterate sequence is deterministic for a fixed experiment and config;
    worker pools change timing columns only.  Per-iteration merging follows
    the configured policy; a final interpolation cleanup pass (radius 0.01)
    runs for every method unless disabled.
    """
    if config is None:
        config = StepConfig(**method_params(exp.kind, method))
    driver = _Driver(method, exp, config, pool, record_insertions, bnb_budget)
    log = driver.log
    start_wall = time.perf_counter()
    start_cpu = time.thread_time()
    pool_base = pool.busy_seconds if pool else 0.0

    def cpu_now() -> float:
        busy = (pool.busy_seconds - pool_base) if pool else 0.0
        return (time.thread_time() - start_cpu) + busy

    def push(k, value, info):
        log.values.append(value)
        log.spike_counts.append(driver.mu.num_spikes)
        log.inner_iterations.append(info.get("inner_iters", 0) if info else 0)
        log.plan_masses.append(driver.gamma.total_mass())
        log.curv_retries.append(info.get("curv_retries", 0) if info else 0)
        log.conv_retries.append(info.get("conv_retries", 0) if info else 0)
        log.cpu_times.append(cpu_now())
        if info:
            log.eps.append(info["eps"])
            log.cbar.append(info["cbar"])
            log.achieved_c_cur.append(info["c_cur"])

    value0 = driver.objective(driver.mu)
    push(0, value0, None)

    step_fn = {
        "mupdps": driver.step_mupdps,
        "fwf": driver.step_fwf,
    }.get(method)
    if step_fn is None:
        step_fn = driver.step_pdps if method in _PDPS_FAMILY else driver.step_fb

    policy = config.merging
    prev_value = value0
    for k in range(iters):
        info = step_fn(k)
        if policy not in ("none", "", None) and driver.mu.num_spikes > 1:
            merged, n = merge_spikes(
                driver.mu,
                policy,
                lambda m: driver.objective(m),
                info["eps"],
            )
            if n:
                driver.mu = merged
                log.merge_events += n
        value = driver.objective(driver.mu)
        info_ratio = max(0.0, value - prev_value) / info["eps"]
        log.achieved_increase_ratio.append(info_ratio)
        prev_value = value
        push(k + 1, value, info)

    if final_cleanup and driver.mu.num_spikes > 1:
        cleaned, n = merge_spikes(
            driver.mu,
            "i:0.01",
            lambda m: driver.objective(m),
            driver.schedule(iters),
        )
        if n:
            driver.mu = cleaned
            log.merge_events += n

    return RunResult(
        method=method,
        kind=exp.kind,
        log=log,
        final_mu=driver.mu,
        final_z=None if driver.z is None else driver.z.copy(),
        resolved=driver.resolved,
        config=config,
        wall_time=time.perf_counter() - start_wall,
    )
