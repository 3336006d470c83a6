"""Synthetic dataset generation with a held-out central block.

Draws exact Gaussian-process data on a small lon/lat window over a few
days, then carves out a central block on the middle day as the holdout.
Used by the validation study and the CLI simulate command; sizes are
bounded by the dense oracle cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dense
from .geo import PointSet
from .kernels import HyperParams

TRUE_SIGMA = 4.140
TRUE_RHO = 5.660
TRUE_PHI = 3.601
TRUE_ZETA = 0.5

LON_RANGE = (73.2, 73.4)
LAT_RANGE = (18.6, 18.8)
HOLDOUT_BLOCK = (73.25, 73.35, 18.65, 18.75)

# intercept, smooth continuous surface, then one effect per later day
TRUE_BETA = (2.0, -1.5, 0.8, -0.5)


@dataclass
class SyntheticData:
    train_points: PointSet
    train_X: np.ndarray
    train_y: np.ndarray
    test_points: PointSet
    test_X: np.ndarray
    test_y: np.ndarray
    beta: np.ndarray
    psi: HyperParams
    column_names: tuple

    @property
    def n_train(self) -> int:
        return len(self.train_points)

    @property
    def n_test(self) -> int:
        return len(self.test_points)


def smooth_surface(lon, lat) -> np.ndarray:
    """Deterministic terrain-like covariate on the sampling window, in [-1, 1]."""
    u = (np.asarray(lon) - LON_RANGE[0]) / (LON_RANGE[1] - LON_RANGE[0])
    v = (np.asarray(lat) - LAT_RANGE[0]) / (LAT_RANGE[1] - LAT_RANGE[0])
    return np.sin(2.0 * np.pi * u) * np.cos(np.pi * v)


def _design(lon, lat, day, n_days):
    cols = [np.ones(len(lon)), smooth_surface(lon, lat)]
    names = ["intercept", "surface"]
    for d in range(1, n_days):
        cols.append((day == d).astype(np.float64))
        names.append(f"day_{d}")
    return np.column_stack(cols), tuple(names)


def simulate_dataset(
    n: int,
    seed: int,
    n_days: int = 3,
    sigma: float = TRUE_SIGMA,
    rho: float = TRUE_RHO,
    phi: float = TRUE_PHI,
    zeta: float = TRUE_ZETA,
    beta=None,
) -> SyntheticData:
    """One exact draw of n points split into train and central-block test.

    Locations are uniform on the window, days uniform over n_days. Points
    inside the holdout block on the middle day form the test set; the
    response is drawn jointly for all points, so train and test share one
    field realization.
    """
    if beta is None:
        beta = np.array(TRUE_BETA[: 2 + max(n_days - 1, 0)], dtype=np.float64)
    else:
        beta = np.asarray(beta, dtype=np.float64)
    psi = HyperParams(
        log_sigma=float(np.log(sigma)),
        log_rho=float(np.log(rho)),
        log_phi=float(np.log(phi)),
        log_zeta=float(np.log(zeta)),
    )
    rng = np.random.default_rng(seed)
    lon = rng.uniform(LON_RANGE[0], LON_RANGE[1], n)
    lat = rng.uniform(LAT_RANGE[0], LAT_RANGE[1], n)
    day = rng.integers(0, n_days, n)
    points = PointSet(lon, lat, day)
    X, names = _design(lon, lat, day, n_days)
    if X.shape[1] != len(beta):
        raise ValueError(f"beta has {len(beta)} entries; design needs {X.shape[1]}")
    y = dense.simulate(points, X, beta, psi, seed=seed + 1)

    lo_lon, hi_lon, lo_lat, hi_lat = HOLDOUT_BLOCK
    mid_day = n_days // 2
    in_block = (
        (lon >= lo_lon)
        & (lon <= hi_lon)
        & (lat >= lo_lat)
        & (lat <= hi_lat)
        & (day == mid_day)
    )
    test_idx = np.flatnonzero(in_block)
    train_idx = np.flatnonzero(~in_block)
    return SyntheticData(
        train_points=points.subset(train_idx),
        train_X=X[train_idx],
        train_y=y[train_idx],
        test_points=points.subset(test_idx),
        test_X=X[test_idx],
        test_y=y[test_idx],
        beta=beta,
        psi=psi,
        column_names=names,
    )
