"""Forward-difference gradient on sensor grids and its exact adjoint.

Signals live flat (one entry per sensor); gradients carry one component per
axis with zero rows at the trailing boundary, matching the usual discrete
TV setup.  The operator norm obeys ``||grad||^2 <= 4 * dim``.
"""

from __future__ import annotations

import numpy as np

__all__ = ["grad_h", "grad_h_adjoint", "tv_value", "project_cellwise_ball", "grad_norm_sq_bound", "power_iteration_norm_sq"]


def grad_h(z: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Forward differences; output shape ``shape + (dim,)``."""
    zz = np.asarray(z, dtype=float).reshape(shape)
    dim = len(shape)
    out = np.zeros(shape + (dim,))
    if dim == 1:
        out[:-1, 0] = zz[1:] - zz[:-1]
    else:
        out[:-1, :, 0] = zz[1:, :] - zz[:-1, :]
        out[:, :-1, 1] = zz[:, 1:] - zz[:, :-1]
    return out


def grad_h_adjoint(y: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Exact adjoint of :func:`grad_h`; output flat of size ``prod(shape)``."""
    dim = len(shape)
    out = np.zeros(shape)
    if dim == 1:
        comp = y[:, 0]
        out[1:] += comp[:-1]
        out[:-1] -= comp[:-1]
    else:
        comp = y[:, :, 0]
        out[1:, :] += comp[:-1, :]
        out[:-1, :] -= comp[:-1, :]
        comp = y[:, :, 1]
        out[:, 1:] += comp[:, :-1]
        out[:, :-1] -= comp[:, :-1]
    return out.ravel()


def tv_value(z: np.ndarray, shape: tuple[int, ...]) -> float:
    """Isotropic total variation: sum of cellwise gradient 2-norms."""
    g = grad_h(z, shape)
    return float(np.sum(np.sqrt(np.sum(g * g, axis=-1))))


def project_cellwise_ball(y: np.ndarray, radius: float) -> np.ndarray:
    """Project each cell's gradient vector onto the 2-ball of given radius."""
    norms = np.sqrt(np.sum(y * y, axis=-1, keepdims=True))
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return y * scale


def grad_norm_sq_bound(dim: int) -> float:
    """Standard forward-difference bound ``||grad||^2 <= 4 dim``."""
    return 4.0 * dim


def power_iteration_norm_sq(shape: tuple[int, ...], iters: int = 200, seed: int = 3) -> float:
    """Largest eigenvalue of ``grad^T grad`` by power iteration."""
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(int(np.prod(shape)))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = grad_h_adjoint(grad_h(v, shape), shape)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam
