"""Spatiotemporal coordinates and great-circle geometry.

Locations are (longitude, latitude) in degrees on a sphere of radius
6371 km; time is a non-negative integer day index. Spatial distance is the
haversine great-circle distance, temporal distance the absolute day gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _core

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class SpatioTemporalPoint:
    """A single observation or knot location.

    lon, lat : degrees, lon in [-180, 180], lat in [-90, 90]
    time : integer day index >= 0
    """

    lon: float
    lat: float
    time: int

    def __post_init__(self):
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"lon must be finite in [-180, 180], got {self.lon!r}")
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise ValueError(f"lat must be finite in [-90, 90], got {self.lat!r}")
        if not (isinstance(self.time, (int, np.integer)) and not isinstance(self.time, bool)):
            raise ValueError(f"time must be an integer day index, got {self.time!r}")
        if self.time < 0:
            raise ValueError(f"time must be >= 0, got {self.time!r}")


class PointSet:
    """Columnar storage for a list of points (lon/lat as float64, time as int64).

    The inference pipeline works on PointSets; SpatioTemporalPoint is the
    scalar view. Construction validates the same invariants as the scalar
    type and reports the first offending row.
    """

    __slots__ = ("lon", "lat", "time")

    def __init__(self, lon, lat, time, validate=True):
        self.lon = np.ascontiguousarray(lon, dtype=np.float64)
        self.lat = np.ascontiguousarray(lat, dtype=np.float64)
        time_arr = np.asarray(time)
        if time_arr.dtype.kind == "f" and not np.array_equal(
            time_arr, np.floor(time_arr), equal_nan=False
        ):
            i = int(np.argmax(time_arr != np.floor(time_arr)))
            raise ValueError(
                f"row {i}: time must be an integer day index, got {time_arr.ravel()[i]!r}"
            )
        self.time = np.ascontiguousarray(time_arr, dtype=np.int64)
        if not (self.lon.shape == self.lat.shape == self.time.shape) or self.lon.ndim != 1:
            raise ValueError("lon, lat, time must be 1-d arrays of equal length")
        if validate:
            self._validate()

    def _validate(self):
        bad = ~(np.isfinite(self.lon) & (self.lon >= -180.0) & (self.lon <= 180.0))
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"row {i}: lon must be finite in [-180, 180], got {self.lon[i]!r}")
        bad = ~(np.isfinite(self.lat) & (self.lat >= -90.0) & (self.lat <= 90.0))
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"row {i}: lat must be finite in [-90, 90], got {self.lat[i]!r}")
        if (self.time < 0).any():
            i = int(np.argmax(self.time < 0))
            raise ValueError(f"row {i}: time must be >= 0, got {self.time[i]!r}")

    @classmethod
    def from_points(cls, points) -> "PointSet":
        pts = list(points)
        return cls(
            [p.lon for p in pts],
            [p.lat for p in pts],
            [p.time for p in pts],
        )

    @classmethod
    def empty(cls) -> "PointSet":
        return cls([], [], [])

    def __len__(self) -> int:
        return self.lon.shape[0]

    def point(self, i: int) -> SpatioTemporalPoint:
        return SpatioTemporalPoint(float(self.lon[i]), float(self.lat[i]), int(self.time[i]))

    def subset(self, idx) -> "PointSet":
        return PointSet(self.lon[idx], self.lat[idx], self.time[idx], validate=False)

    def coord_tuples(self):
        """Exact coordinate triples, usable as dictionary/set keys."""
        return list(zip(self.lon.tolist(), self.lat.tolist(), self.time.tolist()))

    @staticmethod
    def concat(sets) -> "PointSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return PointSet.empty()
        return PointSet(
            np.concatenate([s.lon for s in sets]),
            np.concatenate([s.lat for s in sets]),
            np.concatenate([s.time for s in sets]),
            validate=False,
        )


def as_point_set(points) -> PointSet:
    if isinstance(points, PointSet):
        return points
    return PointSet.from_points(points)


def haversine_km(a: SpatioTemporalPoint, b: SpatioTemporalPoint) -> float:
    """Great-circle distance in km between the spatial parts of two points."""
    m = _core.haversine_matrix(
        np.array([a.lon]), np.array([a.lat]), np.array([b.lon]), np.array([b.lat])
    )
    return float(m[0, 0])


def temporal_gap(a: SpatioTemporalPoint, b: SpatioTemporalPoint) -> int:
    """Absolute difference of the two day indices."""
    return abs(int(a.time) - int(b.time))


def pair_geometry(a: PointSet, b: PointSet, same: bool = False):
    """Precompute the psi-independent geometry between two point sets.

    Returns (dist_km, gap_days, match_flat):
      dist_km, gap_days : (len(a), len(b)) float64 arrays;
      match_flat : flat indices of pairs that receive the covariance jitter.
        With same=True this is the diagonal (the symmetric self-covariance
        case); otherwise it is every pair whose coordinates are exactly
        equal, so that interpolation at a knot location reproduces the
        corresponding knot-matrix row.
    """
    dist = _core.haversine_matrix(a.lon, a.lat, b.lon, b.lat)
    gap = np.abs(a.time[:, None] - b.time[None, :]).astype(np.float64)
    if same:
        k = min(len(a), len(b))
        match = (np.arange(k) * (len(b) + 1)).astype(np.int64)
    else:
        eq = (
            (a.lon[:, None] == b.lon[None, :])
            & (a.lat[:, None] == b.lat[None, :])
            & (a.time[:, None] == b.time[None, :])
        )
        match = np.flatnonzero(eq.ravel()).astype(np.int64)
    return dist, gap, match
