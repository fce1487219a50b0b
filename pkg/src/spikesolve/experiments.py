"""Synthetic experiment construction: ground truth, noise, and parameters.

Four experiment kinds are supported: ``fast1d``/``fast2d`` (point sources
only) and ``biased1d``/``biased2d`` (point sources over an unknown smooth
background observed on the same sensor grid).  Noise levels and
regularisation weights carry the published defaults per kind; spreads and
kernels are scaled to the sensor spacing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import ForwardModel, Observation, build_sensor_grid
from .kernels import SeparableKernel, fast_spread, proximal_kernel
from .measures import Domain, DiscreteMeasure

__all__ = [
    "EXPERIMENT_DEFAULTS",
    "METHOD_ROSTER",
    "METHOD_PARAMS",
    "ExperimentData",
    "generate_experiment",
    "seeded_normals",
]

#: noise std, regularisation alpha, TV weight lambda (None where absent)
EXPERIMENT_DEFAULTS = {
    "fast1d": {"dim": 1, "sensors": (100,), "noise_std": 0.2, "alpha": 0.06, "lam": None},
    "fast2d": {"dim": 2, "sensors": (16, 16), "noise_std": 0.15, "alpha": 0.12, "lam": None},
    "biased1d": {"dim": 1, "sensors": (100,), "noise_std": 0.1, "alpha": 0.2, "lam": 0.02},
    "biased2d": {"dim": 2, "sensors": (16, 16), "noise_std": 0.15, "alpha": 0.06, "lam": 0.005},
}

#: methods applicable to each experiment kind
METHOD_ROSTER = {
    "fast1d": ["mufb", "mupdps", "fwf", "sfb", "radon2fb", "radon2sfb"],
    "fast2d": ["mufb", "mupdps", "fwf", "sfb", "radon2fb", "radon2sfb"],
    "biased1d": ["spdps", "fpdps", "radon2spdps", "radon2fpdps"],
    "biased2d": ["spdps", "fpdps", "radon2spdps", "radon2fpdps"],
}

#: per-method relative step factors, merging policy, and transport tolerance
#: multiplier, per experiment family; radon2 PDPS variants are experimental
METHOD_PARAMS = {
    "fast": {
        "mufb": {"tau0": 0.99, "theta0": 0.0, "merging": "none", "c_con": None},
        "mupdps": {"tau0": 5.0, "theta0": 0.0, "sigma0": 0.198, "merging": "i:0.01", "c_con": None},
        "fwf": {"merging": "i:0.01", "c_con": None},
        "sfb": {"tau0": 0.99, "theta0": 0.9, "merging": "none", "c_con": 100.0},
        "radon2fb": {"tau0": 0.99, "theta0": 0.0, "merging": "m:0.01", "c_con": None},
        "radon2sfb": {"tau0": 0.99, "theta0": 0.9, "merging": "m:0.01", "c_con": 1000.0},
    },
    "biased1d": {
        "spdps": {"tau0": 0.99, "theta0": 0.9, "sigma_p0": 0.99, "sigma_d0": 0.05, "merging": "none", "c_con": 100.0},
        "fpdps": {"tau0": 0.99, "theta0": 0.0, "sigma_p0": 0.99, "sigma_d0": 0.05, "merging": "none", "c_con": None},
        "radon2spdps": {"tau0": 0.99, "theta0": 0.3, "sigma_p0": 0.99, "sigma_d0": 0.05, "merging": "m:0.01", "c_con": 1000.0, "experimental": True},
        "radon2fpdps": {"tau0": 0.99, "theta0": 0.0, "sigma_p0": 0.99, "sigma_d0": 0.05, "merging": "m:0.01", "c_con": None, "experimental": True},
    },
    "biased2d": {
        "spdps": {"tau0": 0.99, "theta0": 0.9, "sigma_p0": 0.99, "sigma_d0": 0.05, "merging": "none", "c_con": 100.0},
        "fpdps": {"tau0": 0.99, "theta0": 0.0, "sigma_p0": 0.99, "sigma_d0": 0.05, "merging": "none", "c_con": None},
        "radon2spdps": {"tau0": 0.99, "theta0": 0.3, "sigma_p0": 0.99, "sigma_d0": 0.15, "merging": "m:0.01", "c_con": 10000.0, "experimental": True},
        "radon2fpdps": {"tau0": 0.99, "theta0": 0.0, "sigma_p0": 0.99, "sigma_d0": 0.15, "merging": "m:0.01", "c_con": None, "experimental": True},
    },
}

#: spread width and proximal kernel support, in sensor spacings
SPREAD_WIDTH_FACTOR = 2.5
RHO_HALF_WIDTH_FACTOR = 1.25

_KIND_IDS = {"fast1d": 1, "fast2d": 2, "biased1d": 3, "biased2d": 4}


def seeded_normals(seed_seq: np.random.SeedSequence, size: int) -> np.ndarray:
    """Standard normals via Box-Muller over a seeded 64-bit PRNG."""
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    pairs = (size + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # in (0, 1], keeps the log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([radius * np.cos(2 * np.pi * u2), radius * np.sin(2 * np.pi * u2)])
    return z[:size]


def _ground_truth_spikes(
    domain: Domain, spacing: float, seed_seq: np.random.SeedSequence
) -> DiscreteMeasure:
    """Four spikes with pairwise-distinct weights in the domain interior."""
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    lo = domain.lower + 0.1 * (domain.upper - domain.lower)
    hi = domain.lower + 0.9 * (domain.upper - domain.lower)
    min_sep = 4.0 * spacing
    locs: list[np.ndarray] = []
    while len(locs) < 4:
        cand = lo + (hi - lo) * rng.random(domain.dim)
        if all(np.linalg.norm(cand - p) >= min_sep for p in locs):
            locs.append(cand)
    while True:
        weights = rng.uniform(2.0, 10.0, size=4)
        if np.unique(weights).size == 4:
            break
    return DiscreteMeasure(domain, np.array(locs), weights, nonnegative=True)


def _bias_image(domain: Domain, centers: np.ndarray) -> np.ndarray:
    """Background from two weighted regions sampled at the sensor centres."""
    if domain.dim == 1:
        x = centers[:, 0]
        z = 0.5 * ((x >= 0.15) & (x <= 0.35)) - 0.3 * ((x >= 0.55) & (x <= 0.8))
    else:
        d1 = np.linalg.norm(centers - np.array([0.3, 0.3]), axis=1)
        d2 = np.linalg.norm(centers - np.array([0.7, 0.65]), axis=1)
        z = 0.5 * (d1 <= 0.15) - 0.3 * (d2 <= 0.2)
    return z.astype(float)


@dataclass
class ExperimentData:
    """Everything one end-to-end run needs, built deterministically from a seed."""

    kind: str
    seed: int
    domain: Domain
    model: ForwardModel
    rho: SeparableKernel
    spread: SeparableKernel
    alpha: float
    lam: float | None
    noise_std: float
    ground_truth: DiscreteMeasure
    bias: np.ndarray | None
    observation: Observation
    params: dict = field(default_factory=dict)

    @property
    def is_biased(self) -> bool:
        return self.lam is not None


def generate_experiment(
    kind: str, seed: int = 0, constants_resolution: int = 128
) -> ExperimentData:
    """Build the forward model, ground truth, and noisy observation for a kind."""
    if kind not in EXPERIMENT_DEFAULTS:
        raise ValueError(f"unknown experiment kind {kind!r}")
    cfg = EXPERIMENT_DEFAULTS[kind]
    dim = cfg["dim"]
    domain = Domain.unit(dim)
    spacing = 1.0 / cfg["sensors"][0]
    spread = fast_spread(SPREAD_WIDTH_FACTOR * spacing, dim)
    rho = proximal_kernel(RHO_HALF_WIDTH_FACTOR * spacing, dim)
    grid = build_sensor_grid(domain, cfg["sensors"], spread)
    model = ForwardModel(grid, spread)
    model.compute_constants(rho, resolution=constants_resolution, seed=7)

    root = np.random.SeedSequence(entropy=(seed, _KIND_IDS[kind]))
    gt_seq, noise_seq = root.spawn(2)
    mu_hat = _ground_truth_spikes(domain, spacing, gt_seq)
    clean = model.apply(mu_hat)
    bias = None
    if cfg["lam"] is not None:
        bias = _bias_image(domain, grid.centers)
        clean = clean + bias
    noise = cfg["noise_std"] * seeded_normals(noise_seq, clean.size)
    obs = Observation(b=clean + noise, clean=clean, noise_std=cfg["noise_std"])

    params = {
        "kind": kind,
        "seed": seed,
        "noise_std": cfg["noise_std"],
        "alpha": cfg["alpha"],
        "lambda": cfg["lam"],
        "sensors": cfg["sensors"],
        "spread_width": SPREAD_WIDTH_FACTOR * spacing,
        "rho_half_width": RHO_HALF_WIDTH_FACTOR * spacing,
        "footprint_radius": grid.footprint_radius,
        "achieved_snr_db": obs.achieved_snr_db(),
    }
    return ExperimentData(
        kind=kind,
        seed=seed,
        domain=domain,
        model=model,
        rho=rho,
        spread=spread,
        alpha=cfg["alpha"],
        lam=cfg["lam"],
        noise_std=cfg["noise_std"],
        ground_truth=mu_hat,
        bias=bias,
        observation=obs,
        params=params,
    )


def method_params(kind: str, method: str) -> dict:
    """Table defaults for one method on one experiment kind."""
    family = "fast" if kind.startswith("fast") else kind
    table = METHOD_PARAMS[family]
    if method not in table:
        raise ValueError(f"method {method!r} not applicable to {kind!r}")
    return dict(table[method])
