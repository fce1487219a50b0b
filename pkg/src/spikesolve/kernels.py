"""Radially structured kernels built from exact piecewise polynomials.

Three kernel families drive the solvers: the physical spread (a compactly
supported C^1 cubic bump), the proximal kernel (an autoconvolution, hence
positive semi-definite by construction), and the sensor measurement kernel
(footprint-averaged spread).  All are tensor products of 1D profiles, each
stored as a :class:`scipy.interpolate.PPoly`, so evaluation, gradients,
antiderivatives, and Lipschitz metadata are exact up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PPoly

from .measures import DiscreteMeasure

__all__ = [
    "Profile1D",
    "SeparableKernel",
    "CertificateFunction",
    "PsdReport",
    "fast_spread",
    "proximal_kernel",
    "sensor_kernel",
    "box_kernel",
    "triangle_kernel",
    "autoconvolve_profile",
    "apply_D",
    "check_psd",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _poly_abs_max(coeffs: np.ndarray, width: float) -> float:
    """Exact max of |p(u)| on [0, width] for coefficients in descending order."""
    cands = [0.0, width]
    dcoeffs = np.polyder(coeffs)
    if dcoeffs.size:
        roots = np.roots(dcoeffs)
        real = roots[np.abs(roots.imag) < 1e-12].real
        cands.extend(r for r in real if 0 < r < width)
    return float(max(abs(np.polyval(coeffs, u)) for u in cands))


def ppoly_from_piecewise_callable(breaks, degree: int, fn) -> PPoly:
    """Exact PPoly of a function that is polynomial of ``degree`` per piece.

    Interpolates ``degree + 1`` Chebyshev points strictly inside each piece;
    exact (up to roundoff) whenever ``fn`` really is piecewise polynomial
    with the given breakpoints.
    """
    breaks = np.asarray(breaks, dtype=float)
    npieces = breaks.size - 1
    coeffs = np.zeros((degree + 1, npieces))
    cheb = np.cos(np.pi * (2 * np.arange(degree + 1) + 1) / (2 * (degree + 1)))
    for j in range(npieces):
        a, b = breaks[j], breaks[j + 1]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        xs = mid + 0.98 * half * cheb
        vals = fn(xs)
        local = np.polyfit(xs - a, vals, degree)
        coeffs[:, j] = local
    return PPoly(coeffs, breaks)


@dataclass(frozen=True)
class Profile1D:
    """Even compactly supported 1D kernel profile on [-radius, radius]."""

    ppoly: PPoly
    dppoly: PPoly
    radius: float
    lipschitz_value: float
    lipschitz_grad: float
    peak: float

    @staticmethod
    def from_ppoly(ppoly: PPoly) -> "Profile1D":
        radius = float(max(abs(ppoly.x[0]), abs(ppoly.x[-1])))
        dp = ppoly.derivative()
        lip_v = lip_g = peak = 0.0
        for j in range(ppoly.x.size - 1):
            width = ppoly.x[j + 1] - ppoly.x[j]
            peak = max(peak, _poly_abs_max(ppoly.c[:, j], width))
            lip_v = max(lip_v, _poly_abs_max(dp.c[:, j], width))
            if dp.c.shape[0] > 1:
                lip_g = max(lip_g, _poly_abs_max(np.polyder(dp.c[:, j]), width))
        return Profile1D(ppoly, dp, radius, lip_v, lip_g, peak)

    def eval(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = self.ppoly(np.clip(u, -self.radius, self.radius))
        np.multiply(out, np.abs(u) <= self.radius, out=out)
        return out

    def grad(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = self.dppoly(np.clip(u, -self.radius, self.radius))
        np.multiply(out, np.abs(u) <= self.radius, out=out)
        return out

    def integral(self, lo: float, hi: float) -> float:
        lo = float(np.clip(lo, -self.radius, self.radius))
        hi = float(np.clip(hi, -self.radius, self.radius))
        return float(self.ppoly.integrate(lo, hi))

    def antideriv_clipped(self):
        """Antiderivative extended constant outside the support."""
        anti = self.ppoly.antiderivative()
        lo, hi = self.ppoly.x[0], self.ppoly.x[-1]

        def psi(u):
            return anti(np.clip(u, lo, hi))

        return psi

    def breakpoints(self) -> np.ndarray:
        return self.ppoly.x.copy()


@dataclass(frozen=True)
class SeparableKernel:
    """Tensor-product kernel on R^n from one shared axis profile."""

    profile: Profile1D
    dim: int
    is_symmetric: bool = True

    @property
    def support_radius(self) -> np.ndarray:
        return np.full(self.dim, self.profile.radius)

    @property
    def lipschitz_value(self) -> float:
        p = self.profile
        if self.dim == 1:
            return p.lipschitz_value
        return float(np.sqrt(self.dim) * p.lipschitz_value * p.peak)

    @property
    def lipschitz_grad(self) -> float:
        p = self.profile
        if self.dim == 1:
            return p.lipschitz_grad
        return float(p.lipschitz_grad * p.peak + p.lipschitz_value**2)

    @property
    def peak(self) -> float:
        return float(self.profile.peak**self.dim)

    def eval(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if self.dim == 1:
            return self.profile.eval(pts[:, 0])
        return self.profile.eval(pts[:, 0]) * self.profile.eval(pts[:, 1])

    def grad(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if self.dim == 1:
            return self.profile.grad(pts[:, 0])[:, None]
        v0, v1 = self.profile.eval(pts[:, 0]), self.profile.eval(pts[:, 1])
        g0, g1 = self.profile.grad(pts[:, 0]), self.profile.grad(pts[:, 1])
        return np.column_stack([g0 * v1, v0 * g1])

    def eval_grad(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Values and gradients sharing the per-axis profile evaluations."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if self.dim == 1:
            return self.profile.eval(pts[:, 0]), self.profile.grad(pts[:, 0])[:, None]
        v0, v1 = self.profile.eval(pts[:, 0]), self.profile.eval(pts[:, 1])
        g0, g1 = self.profile.grad(pts[:, 0]), self.profile.grad(pts[:, 1])
        return v0 * v1, np.column_stack([g0 * v1, v0 * g1])

    def eval_at(self, x) -> float:
        return float(self.eval(np.asarray(x, dtype=float).reshape(1, -1))[0])


def fast_spread(width: float, dim: int = 1) -> SeparableKernel:
    """Compactly supported C^1 piecewise-cubic bump with unit peak.

    Per axis the unique even cubic with value 1 and slope 0 at the origin
    and value/slope 0 at the support boundary ``|u| = width``; gradients
    vanish at the boundary, so the kernel is C^1 on all of R^n.
    """
    if width <= 0:
        raise ValueError("width must be positive")

    def bump(x):
        t = np.abs(np.asarray(x, dtype=float)) / width
        t = np.minimum(t, 1.0)
        return 1.0 - 3.0 * t**2 + 2.0 * t**3

    ppoly = ppoly_from_piecewise_callable([-width, 0.0, width], 3, bump)
    return SeparableKernel(Profile1D.from_ppoly(ppoly), dim)


def autoconvolve_profile(profile: Profile1D) -> Profile1D:
    """Exact autoconvolution of a compactly supported piecewise polynomial.

    The result is piecewise polynomial of degree ``2 d + 1`` with
    breakpoints at all pairwise sums of the input breakpoints; each output
    piece is recovered exactly by Gauss quadrature plus interpolation.
    """
    breaks_in = profile.breakpoints()
    degree_in = profile.ppoly.c.shape[0] - 1
    sums = np.add.outer(breaks_in, breaks_in).ravel()
    breaks_out = np.unique(np.round(sums, 15))

    def conv(xs):
        xs = np.atleast_1d(xs)
        out = np.empty_like(xs)
        for i, x in enumerate(xs):
            lo = max(breaks_in[0], x - breaks_in[-1])
            hi = min(breaks_in[-1], x - breaks_in[0])
            if hi <= lo:
                out[i] = 0.0
                continue
            cuts = np.concatenate([breaks_in, x - breaks_in])
            cuts = np.unique(np.clip(cuts, lo, hi))
            total = 0.0
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b <= a:
                    continue
                mid, half = 0.5 * (a + b), 0.5 * (b - a)
                nodes = mid + half * _GL_NODES
                total += half * np.sum(
                    _GL_WEIGHTS * profile.eval(nodes) * profile.eval(x - nodes)
                )
            out[i] = total
        return out

    ppoly = ppoly_from_piecewise_callable(breaks_out, 2 * degree_in + 1, conv)
    return Profile1D.from_ppoly(ppoly)


def proximal_kernel(half_width: float, dim: int = 1) -> SeparableKernel:
    """Positive semi-definite kernel for the particle-to-wave operator.

    Autoconvolution of the cubic bump of half the requested support, scaled
    to unit peak; per-axis Fourier transform is a square, so the discrete
    psd check passes by construction.
    """
    root = fast_spread(half_width, dim=1).profile
    conv = autoconvolve_profile(root)
    scaled = PPoly(conv.ppoly.c / conv.peak, conv.ppoly.x)
    return SeparableKernel(Profile1D.from_ppoly(scaled), dim)


def sensor_kernel(spread: SeparableKernel, footprint_radius: float) -> SeparableKernel:
    """Measurement kernel: spread averaged over the box sensor footprint.

    Per axis ``(Psi(u + r) - Psi(u - r)) / (2 r)`` with ``Psi`` the spread
    antiderivative; closed-form piecewise-polynomial integration, support
    radius ``spread radius + r``.
    """
    r = float(footprint_radius)
    if r <= 0:
        raise ValueError("footprint radius must be positive")
    prof = spread.profile
    psi = prof.antideriv_clipped()
    breaks = np.unique(
        np.round(np.concatenate([prof.breakpoints() - r, prof.breakpoints() + r]), 15)
    )

    def averaged(u):
        return (psi(u + r) - psi(u - r)) / (2.0 * r)

    degree = prof.ppoly.c.shape[0]
    ppoly = ppoly_from_piecewise_callable(breaks, degree, averaged)
    return SeparableKernel(Profile1D.from_ppoly(ppoly), spread.dim)


def box_kernel(radius: float, dim: int = 1) -> SeparableKernel:
    """Indicator of [-radius, radius] per axis; not psd (sign-changing DFT)."""
    ppoly = PPoly(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([-radius, 0.0, radius]))
    return SeparableKernel(Profile1D.from_ppoly(ppoly), dim)


def triangle_kernel(radius: float, dim: int = 1) -> SeparableKernel:
    """Autoconvolution of a box: the classic psd hat function, unit peak."""
    conv = autoconvolve_profile(box_kernel(radius / 2.0, 1).profile)
    scaled = PPoly(conv.ppoly.c / conv.peak, conv.ppoly.x)
    return SeparableKernel(Profile1D.from_ppoly(scaled), dim)


def apply_D(mu: DiscreteMeasure, rho: SeparableKernel, points) -> np.ndarray:
    """Convolution ``[rho * mu](x)`` at one or many points."""
    pts = np.asarray(points, dtype=float).reshape(-1, rho.dim)
    if mu.num_spikes == 0:
        return np.zeros(pts.shape[0])
    diffs = pts[:, None, :] - mu.locations[None, :, :]
    vals = rho.eval(diffs.reshape(-1, rho.dim)).reshape(pts.shape[0], mu.num_spikes)
    return vals @ mu.weights


@dataclass(frozen=True)
class PsdReport:
    passed: bool
    min_real: float
    max_real: float
    threshold: float


def check_psd(kernel: SeparableKernel, grid_size: int = 256) -> PsdReport:
    """Grid Fourier check of positive semi-definiteness.

    Samples the kernel on a uniform grid over twice its support, takes the
    DFT, and requires the minimum real part to be above ``-1e-6`` times the
    maximum.
    """
    if grid_size < 16:
        raise ValueError("grid_size must be at least 16")
    radius = float(np.max(kernel.support_radius))
    window = 2.0 * radius
    dx = 2.0 * window / grid_size
    axis = -window + dx * np.arange(grid_size)
    if kernel.dim == 1:
        values = kernel.eval(axis.reshape(-1, 1))
    else:
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        values = kernel.eval(np.column_stack([xx.ravel(), yy.ravel()])).reshape(
            grid_size, grid_size
        )
    spectrum = np.fft.fftn(np.fft.ifftshift(values)).real * dx**kernel.dim
    min_real, max_real = float(spectrum.min()), float(spectrum.max())
    threshold = -1e-6 * max_real
    return PsdReport(min_real >= threshold, min_real, max_real, threshold)


class _BumpGroup:
    """Bumps sharing one kernel; large sorted 1D groups evaluate banded.

    With sorted centers and a compactly supported kernel, only the centers
    inside one support window contribute at each point; a sentinel-padded
    index band turns that into a dense (points x band) evaluation.
    """

    def __init__(self, kernel, centers, weights, lip_value, lip_grad):
        self.kernel = kernel
        self.centers = centers
        self.weights = weights
        self.lip_value = lip_value
        self.lip_grad = lip_grad
        self.banded = False
        dim = centers.shape[1]
        if dim == 1 and centers.shape[0] >= 12:
            order = np.argsort(centers[:, 0], kind="stable")
            c = centers[order, 0]
            radius = float(kernel.support_radius[0])
            counts = np.searchsorted(c, c + radius, "right") - np.searchsorted(
                c, c - radius, "left"
            )
            band = int(np.max(counts)) + 2
            if band < 0.6 * c.size:
                self.banded = True
                self._c_sorted = c
                self._radius = radius
                self._band = band
                far = c[-1] + 1e30
                self._c_pad = np.concatenate([c, np.full(band, far)])
                self._w_pad = np.concatenate([weights[order], np.zeros(band)])

    def accumulate(self, pts, vals, grads):
        """Add this group's values (and gradients when ``grads`` given)."""
        if self.banded:
            u = pts[:, 0]
            lo = np.searchsorted(self._c_sorted, u - self._radius, "left")
            cols = lo[:, None] + np.arange(self._band)[None, :]
            diffs = u[:, None] - self._c_pad[cols]
            w = self._w_pad[cols]
            prof = self.kernel.profile
            kv = prof.eval(diffs.ravel()).reshape(diffs.shape)
            vals += np.sum(kv * w, axis=1)
            if grads is not None:
                kg = prof.grad(diffs.ravel()).reshape(diffs.shape)
                grads[:, 0] += np.sum(kg * w, axis=1)
            return
        dim = pts.shape[1]
        diffs = (pts[:, None, :] - self.centers[None, :, :]).reshape(-1, dim)
        if grads is None:
            kv = self.kernel.eval(diffs)
            vals += kv.reshape(pts.shape[0], -1) @ self.weights
        else:
            kv, kg = self.kernel.eval_grad(diffs)
            vals += kv.reshape(pts.shape[0], -1) @ self.weights
            kg = kg.reshape(pts.shape[0], -1, dim)
            for d in range(dim):
                grads[:, d] += kg[:, :, d] @ self.weights


class CertificateFunction:
    """Weighted kernel bumps plus an affine offset, with exact gradients.

    Bumps are stored in groups sharing one kernel so evaluation at many
    points vectorises into a dense (points x centers) kernel matrix per
    group.  An optional per-group Lipschitz bound (for example from sensor
    grid overlap counting) sharpens the global bound used by
    branch-and-bound.
    """

    def __init__(self, dim: int, offset: float = 0.0):
        self.dim = dim
        self.offset = float(offset)
        self._groups: list[_BumpGroup] = []

    def add_group(
        self,
        kernel: SeparableKernel,
        centers,
        weights,
        lipschitz_bound: float | None = None,
        grad_lipschitz_bound: float | None = None,
    ) -> "CertificateFunction":
        centers = np.asarray(centers, dtype=float).reshape(-1, self.dim)
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if centers.shape[0] != weights.size:
            raise ValueError("center/weight count mismatch")
        if weights.size:
            absw = float(np.sum(np.abs(weights)))
            if lipschitz_bound is None:
                lipschitz_bound = absw * kernel.lipschitz_value
            if grad_lipschitz_bound is None:
                grad_lipschitz_bound = absw * kernel.lipschitz_grad
            self._groups.append(
                _BumpGroup(
                    kernel, centers, weights,
                    float(lipschitz_bound), float(grad_lipschitz_bound),
                )
            )
        return self

    def extended(
        self,
        kernel: SeparableKernel,
        centers,
        weights,
        lipschitz_bound: float | None = None,
        grad_lipschitz_bound: float | None = None,
    ) -> "CertificateFunction":
        """New certificate sharing this one's groups plus one more."""
        out = CertificateFunction(self.dim, self.offset)
        out._groups = list(self._groups)
        return out.add_group(
            kernel, centers, weights, lipschitz_bound, grad_lipschitz_bound
        )

    def eval_many(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        out = np.full(pts.shape[0], self.offset)
        for group in self._groups:
            group.accumulate(pts, out, None)
        return out

    def grad_many(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        vals = np.zeros(pts.shape[0])
        grads = np.zeros_like(pts)
        for group in self._groups:
            group.accumulate(pts, vals, grads)
        return grads

    def eval_and_gradnorm(self, points) -> np.ndarray:
        """Columns ``[value, |gradient|]`` at each point, sharing the
        kernel-difference computation between the two."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        vals = np.full(pts.shape[0], self.offset)
        grads = np.zeros_like(pts)
        for group in self._groups:
            group.accumulate(pts, vals, grads)
        return np.column_stack([vals, np.linalg.norm(grads, axis=1)])

    def eval(self, x) -> float:
        return float(self.eval_many(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def grad(self, x) -> np.ndarray:
        return self.grad_many(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def lipschitz_bound(self) -> float:
        return float(sum(group.lip_value for group in self._groups))

    def grad_lipschitz_bound(self) -> float:
        return float(sum(group.lip_grad for group in self._groups))
