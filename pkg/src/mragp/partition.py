"""Recursive binary partitioning of the spatiotemporal domain and knot placement.

The domain is split one dimension per level, longitude splits first, then
latitude, then time. Each split is at the median of the coordinate within
the region being split; ties go left (an observation exactly on a boundary
belongs to the left child). The number of levels K is the total number of
configured splits.

Knots: regions at levels 0..K-1 draw their knots from the prediction
locations inside them (each location usable once, globally); when a region
has fewer unused prediction locations than its budget the remainder is
placed on the edges of an inset rectangular prism with a small jitter.
Leaves (level K) take the observation locations themselves, optionally
thinned uniformly at random. A uniform-random placement scheme is available
as a config switch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSplitError, EmptyRegionError, MragpError
from .geo import PointSet, as_point_set

_DIM_NAMES = ("lon", "lat", "time")


@dataclass(frozen=True)
class PartitionConfig:
    """Partitioning depths and knot budgets.

    n_lon_splits / n_lat_splits / n_time_splits : how many levels split on
        each dimension (processed in that order); K is their sum. K = 0
        (a single-region tree whose knots sit at the observation locations)
        is allowed and used by the exactness tests.
    m0 : level-0 knot budget; level r < K gets a total budget of
        m0 * growth**r split equally across its regions (remainder to the
        earliest regions in traversal order).
    knots_per_region : when set, overrides the level-total budgets with a
        flat per-region count at every level below K.
    thinning_rate : fraction of each leaf's distinct observation locations
        kept as knots, ceil(rate * count) of them, in (0, 1].
    knot_scheme : "pred" (prediction-location guided, the default) or
        "uniform" (uniform random inside the region bounds).
    """

    n_lon_splits: int = 1
    n_lat_splits: int = 1
    n_time_splits: int = 1
    m0: int = 20
    growth: int = 2
    knots_per_region: int | None = None
    thinning_rate: float = 1.0
    knot_scheme: str = "pred"
    prism_inset: float = 0.8
    prism_jitter: float = 0.01

    def __post_init__(self):
        for name in ("n_lon_splits", "n_lat_splits", "n_time_splits"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.m0 < 1:
            raise ValueError("m0 must be >= 1")
        if self.growth < 1:
            raise ValueError("growth must be >= 1")
        if self.knots_per_region is not None and self.knots_per_region < 1:
            raise ValueError("knots_per_region must be >= 1 when set")
        if not (0.0 < self.thinning_rate <= 1.0):
            raise ValueError("thinning_rate must be in (0, 1]")
        if self.knot_scheme not in ("pred", "uniform"):
            raise ValueError("knot_scheme must be 'pred' or 'uniform'")
        if not (0.0 < self.prism_inset <= 1.0):
            raise ValueError("prism_inset must be in (0, 1]")
        if not (0.0 <= self.prism_jitter < 0.5 * (1.0 - self.prism_inset)):
            raise ValueError("prism_jitter must keep knots inside the region")

    @property
    def n_splits(self) -> int:
        return self.n_lon_splits + self.n_lat_splits + self.n_time_splits

    @property
    def n_levels(self) -> int:
        return self.n_splits + 1

    def split_dims(self):
        return (
            [0] * self.n_lon_splits + [1] * self.n_lat_splits + [2] * self.n_time_splits
        )


class Region:
    """A node of the partition tree."""

    __slots__ = (
        "level",
        "index",
        "path",
        "bounds",
        "parent",
        "children",
        "split_dim",
        "split_value",
        "obs_idx",
        "knots",
    )

    def __init__(self, level, index, path, bounds, parent, obs_idx):
        self.level = level
        self.index = index
        self.path = path
        self.bounds = bounds
        self.parent = parent
        self.children = []
        self.split_dim = None
        self.split_value = None
        self.obs_idx = obs_idx
        self.knots = None

    @property
    def n_obs(self) -> int:
        return len(self.obs_idx)

    @property
    def n_knots(self) -> int:
        return 0 if self.knots is None else len(self.knots)

    def ancestors(self):
        """Path from the root down to (excluding) this region."""
        chain = []
        r = self.parent
        while r is not None:
            chain.append(r)
            r = r.parent
        return chain[::-1]


class RegionTree:
    """The full partition: regions by level, with routing for new points."""

    def __init__(self, levels, points, config, split_dims):
        self.levels = levels
        self.points = points
        self.config = config
        self.split_dims = split_dims

    @property
    def root(self) -> Region:
        return self.levels[0][0]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def leaves(self):
        return self.levels[-1]

    def regions(self):
        for level in self.levels:
            yield from level

    def route(self, points: PointSet) -> np.ndarray:
        """Region index at every level for each point: (n, K+1) int array.

        Pure boundary comparisons; out-of-domain coordinates follow the
        nearest-side comparisons, which is equivalent to clipping them to
        the root bounds first.
        """
        pts = as_point_set(points)
        n = len(pts)
        coords = (pts.lon, pts.lat, pts.time.astype(np.float64))
        out = np.zeros((n, self.n_levels), dtype=np.int64)
        idx = np.zeros(n, dtype=np.int64)
        for k, dim in enumerate(self.split_dims):
            splits = np.array(
                [r.split_value for r in self.levels[k]], dtype=np.float64
            )
            idx = 2 * idx + (coords[dim] > splits[idx])
            out[:, k + 1] = idx
        return out

    def summary_rows(self):
        """Flat per-region rows for the tree dump."""
        rows = []
        for level in self.levels:
            for r in level:
                rows.append(
                    (
                        r.level,
                        r.index,
                        r.path,
                        *[float(v) for v in r.bounds.ravel()],
                        r.n_obs,
                        r.n_knots,
                    )
                )
        return rows


def build_tree(obs, config: PartitionConfig, seed=None) -> RegionTree:
    """Split the observations into the configured binary region tree.

    Splits are deterministic (medians), so the seed is unused here; it is
    accepted for interface symmetry with place_knots.
    """
    pts = as_point_set(obs)
    if len(pts) == 0:
        raise EmptyRegionError("cannot partition zero observations")
    coords = (pts.lon, pts.lat, pts.time.astype(np.float64))
    bounds = np.array(
        [
            [pts.lon.min(), pts.lon.max()],
            [pts.lat.min(), pts.lat.max()],
            [float(pts.time.min()), float(pts.time.max())],
        ]
    )
    root = Region(0, 0, "R", bounds, None, np.arange(len(pts), dtype=np.int64))
    levels = [[root]]
    dims = config.split_dims()
    for k, dim in enumerate(dims):
        nxt = []
        for region in levels[k]:
            c = coords[dim][region.obs_idx]
            if c.min() == c.max():
                raise DegenerateSplitError(
                    f"region {region.path}: cannot split on {_DIM_NAMES[dim]}, "
                    f"single distinct value {c[0]!r}"
                )
            b = float(np.median(c))
            left_mask = c <= b
            if left_mask.all() or not left_mask.any():
                raise EmptyRegionError(
                    f"region {region.path}: median split on {_DIM_NAMES[dim]} at {b!r} "
                    "produces an empty child"
                )
            region.split_dim = dim
            region.split_value = b
            for side, mask in ((0, left_mask), (1, ~left_mask)):
                cb = region.bounds.copy()
                if side == 0:
                    cb[dim, 1] = b
                else:
                    cb[dim, 0] = b
                child = Region(
                    k + 1,
                    2 * region.index + side,
                    region.path + str(side),
                    cb,
                    region,
                    region.obs_idx[mask],
                )
                region.children.append(child)
                nxt.append(child)
        levels.append(nxt)
    return RegionTree(levels, pts, config, dims)


def _time_int_range(tree: RegionTree, region: Region):
    """Inclusive integer day range admissible inside the region."""
    lo, hi = region.bounds[2]
    root_lo = tree.root.bounds[2, 0]
    imin = math.ceil(lo) if lo == root_lo else math.floor(lo) + 1
    imax = math.floor(hi)
    return imin, imax


def _prism_knots(tree, region, count, rng, used, config):
    """Knots on the edges of an inset rectangular prism, jittered.

    The prism spans the central prism_inset fraction of each dimension;
    jitter is uniform within +/- prism_jitter of the extent. Times are
    rounded to admissible integer days. Re-jitters on the (measure-zero)
    event of colliding with an already-used location.
    """
    lo = region.bounds[:, 0].copy()
    hi = region.bounds[:, 1].copy()
    extent = hi - lo
    margin = 0.5 * (1.0 - config.prism_inset) * extent
    a, b = lo + margin, hi - margin

    corners = [
        (a[0], a[1], a[2]), (b[0], a[1], a[2]), (a[0], b[1], a[2]), (b[0], b[1], a[2]),
        (a[0], a[1], b[2]), (b[0], a[1], b[2]), (a[0], b[1], b[2]), (b[0], b[1], b[2]),
    ]
    edges = [(0, 1), (2, 3), (4, 5), (6, 7),
             (0, 2), (1, 3), (4, 6), (5, 7),
             (0, 4), (1, 5), (2, 6), (3, 7)]
    base = [np.array(c) for c in corners[: min(count, 8)]]
    extra = count - len(base)
    if extra > 0:
        per_edge = [0] * len(edges)
        for e in range(extra):
            per_edge[e % len(edges)] += 1
        for (u, v), ne in zip(edges, per_edge):
            cu, cv = np.array(corners[u]), np.array(corners[v])
            for f in range(1, ne + 1):
                base.append(cu + (cv - cu) * (f / (ne + 1.0)))

    imin, imax = _time_int_range(tree, region)
    amp = config.prism_jitter * extent
    out_lon, out_lat, out_time = [], [], []
    for pos in base:
        for _ in range(64):
            jit = pos + rng.uniform(-1.0, 1.0, size=3) * amp
            jlon = float(np.clip(jit[0], a[0] - amp[0], b[0] + amp[0]))
            jlat = float(np.clip(jit[1], a[1] - amp[1], b[1] + amp[1]))
            jt = int(np.clip(round(jit[2]), imin, imax))
            key = (jlon, jlat, jt)
            if key not in used:
                used.add(key)
                out_lon.append(jlon)
                out_lat.append(jlat)
                out_time.append(jt)
                break
        else:
            raise MragpError(
                f"region {region.path}: could not place a unique prism knot"
            )
    return PointSet(out_lon, out_lat, out_time, validate=False)


def _uniform_knots(tree, region, count, rng, used):
    imin, imax = _time_int_range(tree, region)
    out_lon, out_lat, out_time = [], [], []
    for _ in range(count):
        for _ in range(64):
            jlon = float(rng.uniform(region.bounds[0, 0], region.bounds[0, 1]))
            jlat = float(rng.uniform(region.bounds[1, 0], region.bounds[1, 1]))
            jt = int(rng.integers(imin, imax + 1))
            key = (jlon, jlat, jt)
            if key not in used:
                used.add(key)
                out_lon.append(jlon)
                out_lat.append(jlat)
                out_time.append(jt)
                break
        else:
            raise MragpError(f"region {region.path}: could not place a unique knot")
    return PointSet(out_lon, out_lat, out_time, validate=False)


def _region_budgets(config, level, n_regions):
    if config.knots_per_region is not None:
        return [config.knots_per_region] * n_regions
    total = config.m0 * config.growth ** level
    base, rem = divmod(total, n_regions)
    return [base + (1 if i < rem else 0) for i in range(n_regions)]


def place_knots(tree: RegionTree, pred_points=None, seed=0) -> RegionTree:
    """Assign knots to every region of the tree (in place; returns the tree).

    Coarse levels are processed first. A location, once used by any knot,
    is globally unavailable to later knots, so no two knots ever coincide,
    which also protects the conditional covariance blocks from exact
    singularity. Deterministic for a given tree, prediction set and seed.
    """
    config = tree.config
    rng = np.random.default_rng(seed)
    used = set()
    pred = as_point_set(pred_points) if pred_points is not None else PointSet.empty()
    pred_routes = tree.route(pred) if len(pred) else None
    pred_keys = pred.coord_tuples()

    for k in range(tree.n_levels - 1):
        regions = tree.levels[k]
        budgets = _region_budgets(config, k, len(regions))
        for region, budget in zip(regions, budgets):
            if config.knot_scheme == "uniform":
                region.knots = _uniform_knots(tree, region, budget, rng, used)
                continue
            if pred_routes is not None:
                inside = np.flatnonzero(pred_routes[:, k] == region.index)
                avail = [int(i) for i in inside if pred_keys[i] not in used]
            else:
                avail = []
            if len(avail) >= budget:
                pick = rng.choice(len(avail), size=budget, replace=False)
                chosen = [avail[int(i)] for i in np.sort(pick)]
                for i in chosen:
                    used.add(pred_keys[i])
                region.knots = pred.subset(np.array(chosen, dtype=np.int64))
            else:
                for i in avail:
                    used.add(pred_keys[i])
                head = pred.subset(np.array(avail, dtype=np.int64))
                fill = _prism_knots(
                    tree, region, budget - len(avail), rng, used, config
                )
                region.knots = PointSet.concat([head, fill])

    for leaf in tree.leaves:
        keys = tree.points.subset(leaf.obs_idx).coord_tuples()
        seen = set()
        locs = []
        for i, key in zip(leaf.obs_idx.tolist(), keys):
            if key in seen or key in used:
                continue
            seen.add(key)
            locs.append((i, key))
        if not locs:
            raise MragpError(
                f"leaf {leaf.path}: no unused observation locations left for knots"
            )
        keep = math.ceil(config.thinning_rate * len(locs))
        pick = rng.choice(len(locs), size=keep, replace=False)
        chosen = [locs[int(i)] for i in np.sort(pick)]
        for _, key in chosen:
            used.add(key)
        leaf.knots = tree.points.subset(np.array([i for i, _ in chosen], dtype=np.int64))
    return tree
