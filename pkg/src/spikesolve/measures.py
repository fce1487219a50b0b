"""Discrete measures, transport plans, and the unbalanced transport cost.

A discrete measure is a finite collection of weighted spikes on a box
domain; a transport plan is a finite collection of (source, target, mass)
atoms.  Both are immutable value types: every operation returns a new
object.  The diagnostic unbalanced cost pairs the transported-mass cost
``c2(x, y) = |x - y|^2 / 2`` with a marginal energy on the untransported
remainders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Domain",
    "DiscreteMeasure",
    "TransportPlan",
    "MarginalEnergy",
    "KernelNotPsdError",
    "radon_norm",
    "d_norm_sq",
    "d_inner",
    "plan_marginal_diff",
    "v_cost",
]

#: relative spike-merge tolerance (fraction of the domain diameter)
DEDUP_RTOL = 1e-12


class KernelNotPsdError(ValueError):
    """A quadratic form came out negative beyond tolerance: bad kernel config."""


def _as_points(arr, dim: int) -> np.ndarray:
    pts = np.asarray(arr, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, dim) if dim > 1 else pts.reshape(-1, 1)
    if pts.size == 0:
        pts = pts.reshape(0, dim)
    return pts


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box in R^n, n in {1, 2}."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size not in (1, 2):
            raise ValueError("domain must be a box in R^1 or R^2")
        if not np.all(lo < hi):
            raise ValueError("domain lower bound must be componentwise below upper")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, points, atol: float = 0.0) -> bool:
        pts = _as_points(points, self.dim)
        return bool(
            np.all(pts >= self.lower - atol) and np.all(pts <= self.upper + atol)
        )

    def clamp(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return np.clip(pts, self.lower, self.upper)

    @staticmethod
    def unit(dim: int) -> "Domain":
        return Domain(np.zeros(dim), np.ones(dim))


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite atomic measure ``sum_j w_j delta_{x_j}`` on a domain."""

    domain: Domain
    locations: np.ndarray
    weights: np.ndarray
    nonnegative: bool = False

    def __post_init__(self):
        locs = _as_points(self.locations, self.domain.dim)
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if locs.shape[0] != w.size:
            raise ValueError("location/weight count mismatch")
        if locs.shape[0] and not self.domain.contains(locs, atol=1e-9):
            raise ValueError("spike locations outside domain")
        if self.nonnegative and w.size and np.min(w) < 0:
            raise ValueError("negative weight in nonnegative-mode measure")
        locs.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", w)

    @staticmethod
    def empty(domain: Domain, nonnegative: bool = False) -> "DiscreteMeasure":
        return DiscreteMeasure(
            domain, np.zeros((0, domain.dim)), np.zeros(0), nonnegative
        )

    @property
    def num_spikes(self) -> int:
        return self.weights.size

    def prune(self, weight_tol: float = 0.0) -> "DiscreteMeasure":
        """Merge near-duplicate locations and drop (near-)zero weights.

        Locations within ``DEDUP_RTOL`` times the domain diameter are merged
        by summing weights; the first occurrence keeps its exact coordinates.
        """
        if self.num_spikes == 0:
            return self
        tol = DEDUP_RTOL * self.domain.diameter
        locs, w = self.locations, self.weights
        order = np.lexsort(locs.T[::-1])
        keep_locs: list[np.ndarray] = []
        keep_w: list[float] = []
        for idx in order:
            if keep_locs and np.linalg.norm(locs[idx] - keep_locs[-1]) <= tol:
                keep_w[-1] += w[idx]
            else:
                keep_locs.append(locs[idx])
                keep_w.append(w[idx])
        out_locs = np.array(keep_locs)
        out_w = np.array(keep_w)
        mask = np.abs(out_w) > weight_tol
        out_w_masked = out_w[mask]
        if self.nonnegative:
            out_w_masked = np.maximum(out_w_masked, 0.0)
        return DiscreteMeasure(
            self.domain, out_locs[mask], out_w_masked, self.nonnegative
        )

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(
            self.domain,
            self.locations,
            factor * self.weights,
            self.nonnegative and factor >= 0,
        )

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.num_spikes == 0:
            return DiscreteMeasure(self.domain, self.locations, self.weights, False)
        if self.num_spikes == 0:
            return DiscreteMeasure(self.domain, other.locations, other.weights, False)
        return DiscreteMeasure(
            self.domain,
            np.vstack([self.locations, other.locations]),
            np.concatenate([self.weights, other.weights]),
            False,
        )

    def __sub__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        return self + other.scaled(-1.0)

    def to_csv_rows(self) -> list[str]:
        """Rows ``x1[,x2],weight`` for the harness CSV format."""
        rows = []
        for x, w in zip(self.locations, self.weights):
            rows.append(",".join(f"{c!r}" for c in x) + f",{w!r}")
        return rows


@dataclass(frozen=True)
class TransportPlan:
    """Finite atomic two-plan: (source, target, mass) triples on domain^2."""

    domain: Domain
    sources: np.ndarray
    targets: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        src = _as_points(self.sources, self.domain.dim)
        tgt = _as_points(self.targets, self.domain.dim)
        m = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if not (src.shape[0] == tgt.shape[0] == m.size):
            raise ValueError("plan atom count mismatch")
        if src.shape[0] and not (
            self.domain.contains(src, atol=1e-9) and self.domain.contains(tgt, atol=1e-9)
        ):
            raise ValueError("plan atoms outside domain")
        for a in (src, tgt, m):
            a.flags.writeable = False
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "targets", tgt)
        object.__setattr__(self, "masses", m)

    @staticmethod
    def empty(domain: Domain) -> "TransportPlan":
        d = domain.dim
        return TransportPlan(domain, np.zeros((0, d)), np.zeros((0, d)), np.zeros(0))

    @property
    def num_atoms(self) -> int:
        return self.masses.size

    def total_mass(self) -> float:
        return float(np.sum(np.abs(self.masses)))

    def offdiagonal_mass(self) -> float:
        """Mass carried by atoms that actually move (source != target)."""
        if self.num_atoms == 0:
            return 0.0
        moved = np.linalg.norm(self.targets - self.sources, axis=1) > 0
        return float(np.sum(np.abs(self.masses[moved])))

    def transport_cost(self) -> float:
        """``int c2 d|gamma|`` with ``c2(x, y) = |x - y|^2 / 2``."""
        if self.num_atoms == 0:
            return 0.0
        sq = np.sum((self.targets - self.sources) ** 2, axis=1)
        return float(0.5 * np.sum(np.abs(self.masses) * sq))

    def marginal(self, which: int) -> DiscreteMeasure:
        """Push-forward marginal: 0 for sources, 1 for targets."""
        pts = self.sources if which == 0 else self.targets
        return DiscreteMeasure(self.domain, pts, self.masses).prune()

    def with_masses(self, masses) -> "TransportPlan":
        return TransportPlan(self.domain, self.sources, self.targets, masses)


def radon_norm(mu: DiscreteMeasure) -> float:
    """Total variation of an atomic measure: sum of absolute pruned weights."""
    return float(np.sum(np.abs(mu.prune().weights)))


def d_norm_sq(mu: DiscreteMeasure, rho) -> float:
    """Squared seminorm ``<D mu | mu>`` for the convolution operator ``rho *``.

    Raises :class:`KernelNotPsdError` if the quadratic form is negative
    beyond ``1e-9`` times the squared total mass.
    """
    mu = mu.prune()
    if mu.num_spikes == 0:
        return 0.0
    diffs = mu.locations[:, None, :] - mu.locations[None, :, :]
    gram = rho.eval(diffs.reshape(-1, mu.domain.dim)).reshape(
        mu.num_spikes, mu.num_spikes
    )
    val = float(mu.weights @ gram @ mu.weights)
    total = float(np.sum(np.abs(mu.weights)))
    tol = 1e-9 * total * total
    if val < -tol:
        raise KernelNotPsdError(
            f"<D mu | mu> = {val:.3e} < -{tol:.3e}: kernel is not positive semi-definite"
        )
    return val


def d_inner(mu: DiscreteMeasure, nu: DiscreteMeasure, rho) -> float:
    """Semi-inner product ``<D mu | nu>`` between two atomic measures."""
    if mu.num_spikes == 0 or nu.num_spikes == 0:
        return 0.0
    diffs = mu.locations[:, None, :] - nu.locations[None, :, :]
    gram = rho.eval(diffs.reshape(-1, mu.domain.dim)).reshape(
        mu.num_spikes, nu.num_spikes
    )
    return float(mu.weights @ gram @ nu.weights)


def plan_marginal_diff(gamma: TransportPlan) -> DiscreteMeasure:
    """Signed measure ``(pi^1_# - pi^0_#) gamma``, pruned."""
    if gamma.num_atoms == 0:
        return DiscreteMeasure.empty(gamma.domain)
    locs = np.vstack([gamma.targets, gamma.sources])
    w = np.concatenate([gamma.masses, -gamma.masses])
    return DiscreteMeasure(gamma.domain, locs, w).prune()


@dataclass(frozen=True)
class MarginalEnergy:
    """Marginal cost ``E(nu0, nu1) = 0.5 ||nu1 - nu0||^2`` in a chosen seminorm.

    ``variant`` is ``"radon"`` for the squared Radon metric or ``"d"`` for the
    squared convolution seminorm induced by ``kernel``.
    """

    variant: str
    kernel: object | None = field(default=None)

    def __post_init__(self):
        if self.variant not in ("radon", "d"):
            raise ValueError("variant must be 'radon' or 'd'")
        if self.variant == "d" and self.kernel is None:
            raise ValueError("'d' variant needs a kernel")

    def __call__(self, nu0: DiscreteMeasure, nu1: DiscreteMeasure) -> float:
        diff = nu1 - nu0
        if self.variant == "radon":
            return 0.5 * radon_norm(diff) ** 2
        return 0.5 * d_norm_sq(diff, self.kernel)


def v_cost(
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
    gamma: TransportPlan,
    energy: MarginalEnergy,
    c_scale: float = 1.0,
    e_scale: float = 1.0,
) -> float:
    """Unbalanced transport cost of a candidate plan between two measures.

    ``c_scale * int c2 d|gamma| + e_scale * E(mu0 - pi^0 gamma, mu1 - pi^1 gamma)``.
    Invariant with respect to diagonal additions to ``gamma``.
    """
    if c_scale < 0 or e_scale < 0:
        raise ValueError("scales must be nonnegative")
    transported = c_scale * gamma.transport_cost()
    rem0 = mu0 - gamma.marginal(0)
    rem1 = mu1 - gamma.marginal(1)
    return transported + e_scale * energy(rem0, rem1)
