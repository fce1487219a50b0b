"""Sensor-grid forward operator, its preadjoint, and model constants.

The operator maps an atomic measure to one reading per sensor through a
shared measurement kernel (footprint-averaged spread) translated to each
sensor centre.  The preadjoint maps a sensor vector to a continuous
function on the domain; its values and spatial gradients are the building
blocks of the dual certificates that drive spike insertion and sliding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import CertificateFunction, SeparableKernel, fast_spread, sensor_kernel
from .measures import Domain, DiscreteMeasure, KernelNotPsdError, d_norm_sq

__all__ = [
    "SensorGrid",
    "ModelConstants",
    "ForwardModel",
    "Observation",
    "build_sensor_grid",
    "estimate_L",
]


@dataclass(frozen=True)
class SensorGrid:
    """Uniform grid of box-footprint sensors sharing one measurement kernel."""

    domain: Domain
    counts: tuple[int, ...]
    centers: np.ndarray
    footprint_radius: float
    kernel: SeparableKernel

    @property
    def num_sensors(self) -> int:
        return self.centers.shape[0]

    @property
    def spacing(self) -> float:
        widths = self.domain.upper - self.domain.lower
        return float(widths[0] / self.counts[0])


def build_sensor_grid(
    domain: Domain,
    counts: tuple[int, ...],
    spread: SeparableKernel,
    footprint_factor: float = 0.4,
) -> SensorGrid:
    """Cell-centred sensor grid with footprint half-width ``factor * spacing``."""
    if len(counts) != domain.dim:
        raise ValueError("one sensor count per axis")
    axes = []
    for ax, count in enumerate(counts):
        lo, hi = domain.lower[ax], domain.upper[ax]
        step = (hi - lo) / count
        axes.append(lo + step * (np.arange(count) + 0.5))
    if domain.dim == 1:
        centers = axes[0].reshape(-1, 1)
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        centers = np.column_stack([xx.ravel(), yy.ravel()])
    spacing = float((domain.upper[0] - domain.lower[0]) / counts[0])
    r = footprint_factor * spacing
    kernel = sensor_kernel(spread, r)
    return SensorGrid(domain, tuple(counts), centers, r, kernel)


@dataclass(frozen=True)
class ModelConstants:
    """Operator constants used by step-length rules and transport controls.

    ``L`` bounds the quadratic form ratio ``<A_* A mu | mu> / <D mu | mu>``;
    ``norm_A_sq`` bounds the Radon-norm operator norm squared; ``theta_F_sq``
    is the firm transport Lipschitz constant, the tighter of the two forms
    (sum over sensors, and overlap-refined).
    """

    L: float
    norm_A_sq: float
    N_psi: int
    L_psi: float
    L_grad_psi: float
    theta_F_sq: float
    preadjoint_grad_bound: float


class ForwardModel:
    """Sensor-grid operator with preadjoint evaluation and certificates."""

    def __init__(self, grid: SensorGrid, spread: SeparableKernel):
        self.grid = grid
        self.spread = spread
        self.domain = grid.domain
        self._constants: ModelConstants | None = None

    # -- linear operator -------------------------------------------------

    def sensor_matrix(self, points) -> np.ndarray:
        """Dense matrix ``phi(x_p - z_i)`` of shape (points, sensors)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.domain.dim)
        centers = self.grid.centers
        diffs = pts[:, None, :] - centers[None, :, :]
        return self.grid.kernel.eval(diffs.reshape(-1, self.domain.dim)).reshape(
            pts.shape[0], centers.shape[0]
        )

    def apply(self, mu: DiscreteMeasure) -> np.ndarray:
        if mu.num_spikes == 0:
            return np.zeros(self.grid.num_sensors)
        return self.sensor_matrix(mu.locations).T @ mu.weights

    def preadjoint_eval(self, z, points) -> np.ndarray:
        """``[A_* z](x) = sum_i z_i phi(x - z_i)`` at many points."""
        return self.sensor_matrix(points) @ np.asarray(z, dtype=float)

    def preadjoint_grad(self, z, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.domain.dim)
        z = np.asarray(z, dtype=float)
        centers = self.grid.centers
        diffs = pts[:, None, :] - centers[None, :, :]
        grads = self.grid.kernel.grad(diffs.reshape(-1, self.domain.dim)).reshape(
            pts.shape[0], centers.shape[0], self.domain.dim
        )
        return np.einsum("pcd,c->pd", grads, z)

    def preadjoint_certificate(self, z, scale: float = 1.0) -> CertificateFunction:
        """``scale * A_* z`` as a bump sum with sharp Lipschitz bounds.

        At any point at most ``N_psi`` sensor kernels are active, so both
        the gradient and its Lipschitz constant scale with ``sqrt(N_psi)``
        times the Euclidean norm of the sensor vector.
        """
        z = np.asarray(z, dtype=float)
        cert = CertificateFunction(self.domain.dim)
        consts = self.constants()
        amp = abs(scale) * float(np.linalg.norm(z))
        bound = amp * consts.preadjoint_grad_bound
        grad_bound = amp * np.sqrt(consts.N_psi) * consts.L_grad_psi
        cert.add_group(self.grid.kernel, self.grid.centers, scale * z, bound, grad_bound)
        return cert

    # -- constants ---------------------------------------------------------

    def constants(self) -> ModelConstants:
        if self._constants is None:
            raise RuntimeError("constants not attached; use attach_constants()")
        return self._constants

    def attach_constants(self, constants: ModelConstants) -> "ForwardModel":
        self._constants = constants
        return self

    def count_overlap(self) -> int:
        """Exact max number of sensors whose kernel support covers one point.

        A point x sees sensor i iff ``|x - z_i| < R`` per axis, so the max
        count per axis is the largest number of centres inside an open
        window of width ``2 R``; the tensor grid multiplies axis counts.
        """
        radius = float(self.grid.kernel.support_radius[0])
        per_axis = []
        for ax, count in enumerate(self.grid.counts):
            lo, hi = self.domain.lower[ax], self.domain.upper[ax]
            step = (hi - lo) / count
            centers = lo + step * (np.arange(count) + 0.5)
            best, j = 0, 0
            for i in range(count):
                while centers[i] - centers[j] >= 2 * radius:
                    j += 1
                best = max(best, i - j + 1)
            per_axis.append(best)
        n = 1
        for b in per_axis:
            n *= b
        return n

    def grid_sup(self, fn_values_on_grid: int = 4096) -> tuple[float, float]:
        """Rigorous sups of ``sum_i phi_i(x)^2`` and ``sum_i |grad phi_i(x)|^2``.

        Dense-grid maxima plus a Lipschitz slack for the grid resolution, so
        the returned values are valid upper bounds.
        """
        dim = self.domain.dim
        n_axis = fn_values_on_grid if dim == 1 else int(np.sqrt(fn_values_on_grid)) + 1
        axes = [
            np.linspace(self.domain.lower[ax], self.domain.upper[ax], n_axis)
            for ax in range(dim)
        ]
        if dim == 1:
            pts = axes[0].reshape(-1, 1)
            h = float(axes[0][1] - axes[0][0])
        else:
            xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
            pts = np.column_stack([xx.ravel(), yy.ravel()])
            h = float(np.hypot(axes[0][1] - axes[0][0], axes[1][1] - axes[1][0]))
        mat = self.sensor_matrix(pts)
        val_sq = np.max(np.sum(mat * mat, axis=1))
        centers = self.grid.centers
        diffs = pts[:, None, :] - centers[None, :, :]
        grads = self.grid.kernel.grad(diffs.reshape(-1, dim)).reshape(
            pts.shape[0], centers.shape[0], dim
        )
        grad_sq = np.max(np.sum(grads * grads, axis=(1, 2)))
        n_psi = self.count_overlap()
        k = self.grid.kernel
        slack_val = h * n_psi * k.peak * k.lipschitz_value
        slack_grad = h * n_psi * k.lipschitz_value * k.lipschitz_grad
        return float(val_sq + slack_val), float(grad_sq + slack_grad)

    def compute_constants(
        self, rho: SeparableKernel, resolution: int = 128, seed: int = 0
    ) -> ModelConstants:
        n_psi = self.count_overlap()
        kern = self.grid.kernel
        l_psi = kern.lipschitz_value
        l_grad_psi = kern.lipschitz_grad
        theta_sq = min(
            2.0 * self.grid.num_sensors * l_psi**2, 4.0 * n_psi * l_psi**2
        )
        norm_a_sq, grad_sq = self.grid_sup()
        l_hat = estimate_L(self, rho, resolution=resolution, seed=seed)
        constants = ModelConstants(
            L=l_hat,
            norm_A_sq=norm_a_sq,
            N_psi=n_psi,
            L_psi=l_psi,
            L_grad_psi=l_grad_psi,
            theta_F_sq=theta_sq,
            preadjoint_grad_bound=float(np.sqrt(grad_sq)),
        )
        self._constants = constants
        return constants


def estimate_L(
    model: ForwardModel,
    rho: SeparableKernel,
    resolution: int = 128,
    trials: int = 400,
    seed: int = 0,
    safety: float = 1.05,
) -> float:
    """Smallest ``L`` with ``<A_* A mu | mu> <= L <D mu | mu>`` over random test
    measures on a grid, times a safety factor.

    Sweeps all single-Dirac grid measures, then random sparse combinations.
    Raises :class:`KernelNotPsdError` when a nonpositive ``D``-form shows up.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64 per axis")
    dim = model.domain.dim
    axes = [
        np.linspace(
            model.domain.lower[ax] + 1e-9, model.domain.upper[ax] - 1e-9, resolution
        )
        for ax in range(dim)
    ]
    if dim == 1:
        grid = axes[0].reshape(-1, 1)
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        grid = np.column_stack([xx.ravel(), yy.ravel()])

    rho0 = rho.eval_at(np.zeros(dim))
    if rho0 <= 0:
        raise KernelNotPsdError("rho(0) <= 0")
    mat = model.sensor_matrix(grid)
    dirac_ratios = np.sum(mat * mat, axis=1) / rho0
    best = float(np.max(dirac_ratios)) if dirac_ratios.size else 0.0

    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(trials):
        k = int(rng.integers(2, 9))
        idx = rng.choice(grid.shape[0], size=k, replace=False)
        w = rng.standard_normal(k)
        mu = DiscreteMeasure(model.domain, grid[idx], w)
        denom = d_norm_sq(mu, rho)
        if denom <= 0:
            if denom < 0:
                raise KernelNotPsdError(f"<D mu | mu> = {denom:.3e} <= 0")
            continue
        num = float(np.sum(model.apply(mu) ** 2))
        best = max(best, num / denom)
    return safety * best


@dataclass(frozen=True)
class Observation:
    """Sensor readings: noisy vector, noise-free vector, and noise level."""

    b: np.ndarray
    clean: np.ndarray
    noise_std: float

    def achieved_snr_db(self) -> float:
        noise = self.b - self.clean
        num = float(np.sum(self.clean**2))
        den = float(np.sum(noise**2))
        if den == 0:
            return float("inf")
        return 10.0 * np.log10(num / den)
