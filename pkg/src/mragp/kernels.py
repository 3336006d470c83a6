"""Separable space-time covariance family and hyperparameter priors.

The covariance between points a and b is

    sigma^2 * matern15(dist_km(a, b); rho) * exp(-gap_days(a, b) / phi)

with a relative jitter of sigma^2 * 1e-5 added for numerically coincident
points, and independent Gaussian observation noise of standard deviation
zeta on top. All four hyperparameters are handled on the log scale with
independent normal priors; the noise log-sd is fixed by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .geo import PointSet, as_point_set, pair_geometry

NUGGET = 1e-5

_SQRT3 = math.sqrt(3.0)

_HYPER_NAMES = ("log_sigma", "log_rho", "log_phi", "log_zeta")


@dataclass(frozen=True)
class HyperParams:
    """Log-scale covariance hyperparameters.

    log_sigma : log of the process standard deviation
    log_rho   : log of the spatial range (km)
    log_phi   : log of the temporal range (days)
    log_zeta  : log of the observation-noise standard deviation
    """

    log_sigma: float
    log_rho: float
    log_phi: float
    log_zeta: float

    def __post_init__(self):
        for name in _HYPER_NAMES:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)

    @property
    def rho(self) -> float:
        return math.exp(self.log_rho)

    @property
    def phi(self) -> float:
        return math.exp(self.log_phi)

    @property
    def zeta(self) -> float:
        return math.exp(self.log_zeta)

    def as_vector(self) -> np.ndarray:
        return np.array([self.log_sigma, self.log_rho, self.log_phi, self.log_zeta])

    @classmethod
    def from_vector(cls, v) -> "HyperParams":
        v = np.asarray(v, dtype=float)
        if v.shape != (4,):
            raise ValueError("expected a length-4 vector of log hyperparameters")
        return cls(*v.tolist())


@dataclass(frozen=True)
class PriorSpec:
    """Priors for the mean parameters and the log hyperparameters.

    Fixed effects get independent N(0, beta_prior_var) priors. Each log
    hyperparameter gets an independent normal prior; a fixed_* value pins
    that hyperparameter instead (excluded from the prior density and from
    the free-parameter vector). By default only log_zeta is fixed, at
    log(0.5).
    """

    beta_prior_var: float = 100.0
    hyper_prior_mean: tuple = (0.0, 0.0, 0.0, 0.0)
    hyper_prior_sd: tuple = (2.0, 2.0, 2.0, 2.0)
    fixed_log_sigma: float | None = None
    fixed_log_rho: float | None = None
    fixed_log_phi: float | None = None
    fixed_log_zeta: float | None = field(default=math.log(0.5))

    def __post_init__(self):
        if not self.beta_prior_var > 0:
            raise ValueError("beta_prior_var must be positive")
        if len(self.hyper_prior_mean) != 4 or len(self.hyper_prior_sd) != 4:
            raise ValueError("hyper prior mean/sd must have 4 entries")
        if any(not s > 0 for s in self.hyper_prior_sd):
            raise ValueError("hyper prior sds must be positive")

    @property
    def fixed_values(self) -> tuple:
        return (
            self.fixed_log_sigma,
            self.fixed_log_rho,
            self.fixed_log_phi,
            self.fixed_log_zeta,
        )

    def free_indices(self) -> np.ndarray:
        return np.array([i for i, v in enumerate(self.fixed_values) if v is None], dtype=int)

    @property
    def n_free(self) -> int:
        return len(self.free_indices())

    def pack(self, psi: HyperParams) -> np.ndarray:
        """Free-parameter vector for optimization / sampling."""
        return psi.as_vector()[self.free_indices()]

    def unpack(self, free) -> HyperParams:
        free = np.asarray(free, dtype=float).ravel()
        idx = self.free_indices()
        if free.shape != (len(idx),):
            raise ValueError(f"expected {len(idx)} free parameters, got {free.shape}")
        full = np.array([0.0 if v is None else v for v in self.fixed_values])
        full[idx] = free
        return HyperParams.from_vector(full)

    def start_point(self) -> np.ndarray:
        """Prior means of the free parameters (the default optimizer start)."""
        return np.asarray(self.hyper_prior_mean, dtype=float)[self.free_indices()]


def matern15(dist_km, rho: float):
    """Matern correlation with smoothness 3/2: (1+ sqrt(3) d / rho) exp(-sqrt(3) d / rho).

    Accepts scalars or arrays; rho must be positive. Equals 1 at distance 0
    and decreases strictly with distance.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho!r}")
    d = np.asarray(dist_km, dtype=float)
    if (d < 0).any():
        raise ValueError("distances must be non-negative")
    x = (_SQRT3 / rho) * d
    out = (1.0 + x) * np.exp(-x)
    return float(out) if np.isscalar(dist_km) else out


def temporal_corr(gap_days, phi: float):
    """Exponential temporal correlation exp(-gap / phi); phi must be positive."""
    if not phi > 0:
        raise ValueError(f"phi must be positive, got {phi!r}")
    g = np.asarray(gap_days, dtype=float)
    if (g < 0).any():
        raise ValueError("gaps must be non-negative")
    out = np.exp(-g / phi)
    return float(out) if np.isscalar(gap_days) else out


def cov_st(a, b, psi: HyperParams) -> float:
    """Covariance of the latent process between two points.

    Exactly coincident coordinates get the jitter term sigma^2 * NUGGET on
    top, which keeps interpolation at knot locations consistent with the
    knot covariance matrix.
    """
    from .geo import haversine_km, temporal_gap  # local import avoids cycle at def time

    s2 = psi.sigma ** 2
    value = s2 * matern15(haversine_km(a, b), psi.rho) * temporal_corr(temporal_gap(a, b), psi.phi)
    if a.lon == b.lon and a.lat == b.lat and a.time == b.time:
        value += s2 * NUGGET
    return float(value)


def cov_from_geometry(dist_km, gap_days, match_flat, psi: HyperParams) -> np.ndarray:
    """Covariance block from precomputed geometry (see geo.pair_geometry)."""
    return _core.kernel_values(
        dist_km, gap_days, psi.sigma ** 2, psi.rho, psi.phi, NUGGET, match_flat
    )


def cov_matrix(rows, cols, psi: HyperParams) -> np.ndarray:
    """Dense covariance matrix between two point collections.

    When rows and cols are the same collection the jitter lands on the
    diagonal only, so the result is symmetric positive definite even with
    duplicated locations. Cross-covariance blocks place the jitter at
    exactly-coincident pairs instead.
    """
    a = as_point_set(rows)
    b = a if cols is rows else as_point_set(cols)
    same = b is a or (
        len(a) == len(b)
        and np.array_equal(a.lon, b.lon)
        and np.array_equal(a.lat, b.lat)
        and np.array_equal(a.time, b.time)
    )
    dist, gap, match = pair_geometry(a, b, same=same)
    return cov_from_geometry(dist, gap, match, psi)


def log_hyper_prior(psi: HyperParams, priors: PriorSpec) -> float:
    """Log prior density of the free log hyperparameters (fixed ones excluded)."""
    idx = priors.free_indices()
    v = psi.as_vector()[idx]
    mean = np.asarray(priors.hyper_prior_mean, dtype=float)[idx]
    sd = np.asarray(priors.hyper_prior_sd, dtype=float)[idx]
    z = (v - mean) / sd
    return float(np.sum(-0.5 * z * z - np.log(sd) - 0.5 * math.log(2.0 * math.pi)))
