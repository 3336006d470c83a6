"""Compare the compiled numerical core against the NumPy fallback.

Times the four hot kernels (distance matrix, covariance fill, sparse LDL'
factorization, triangular solves) and one end-to-end posterior density
evaluation per backend. Run from the repository root:

    python3 benchmarks/bench_core.py
    python3 benchmarks/bench_core.py --n-obs 1200 --repeats 5
"""

import argparse
import math
import time

import numpy as np
import scipy.sparse as sp

import mragp._core as core
from mragp._core import load_backend
from mragp.geo import PointSet
from mragp.inference import Posterior
from mragp.kernels import HyperParams, PriorSpec
from mragp.partition import PartitionConfig, build_tree, place_knots
from mragp.sparse import SparseSymMatrix, analyze, factorize
from mragp.synthetic import simulate_dataset


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def random_spd(n, density, seed):
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=density, random_state=rng, format="csc")
    a = a + a.T + n * sp.eye(n, format="csc")
    return SparseSymMatrix.from_dense(a.toarray())


def bench_backend(impl, args):
    rng = np.random.default_rng(0)
    m = args.matrix_size
    lon = rng.uniform(73.2, 73.4, m)
    lat = rng.uniform(18.6, 18.8, m)
    out = {}

    out["haversine_matrix"] = best_of(
        lambda: impl.haversine_matrix(lon, lat, lon, lat), args.repeats
    )

    dist = impl.haversine_matrix(lon, lat, lon, lat)
    gaps = np.abs(
        rng.integers(0, 3, m)[:, None] - rng.integers(0, 3, m)[None, :]
    ).astype(np.float64)
    out["kernel_values"] = best_of(
        lambda: impl.kernel_values(dist, gaps, 16.0, 5.66, 3.6, 0.0, None),
        args.repeats,
    )

    # route the sparse module through this backend for the LDL timings
    saved = (core.ldl_numeric, core.ldl_solve)
    core.ldl_numeric, core.ldl_solve = impl.ldl_numeric, impl.ldl_solve
    try:
        s = random_spd(args.ldl_size, 0.004, seed=1)
        sym = analyze(s)
        out["ldl_numeric"] = best_of(lambda: factorize(sym, s), args.repeats)
        factor = factorize(sym, s)
        b = rng.standard_normal((args.ldl_size, args.n_rhs))
        out["ldl_solve"] = best_of(lambda: factor.solve(b), args.repeats)

        data = simulate_dataset(args.n_obs, seed=2)
        cfg = PartitionConfig(n_lon_splits=2, n_lat_splits=1, n_time_splits=0,
                              m0=20, thinning_rate=0.5)
        tree = build_tree(data.train_points, cfg, seed=2)
        place_knots(tree, pred_points=data.test_points, seed=2)
        post = Posterior(tree, data.train_points, data.train_X, data.train_y,
                         PriorSpec())
        psi = HyperParams(math.log(4.0), math.log(5.0), math.log(3.5), math.log(0.5))
        post.log_unnormalized(psi)  # warm the cached layouts before timing
        out["posterior_density"] = best_of(
            lambda: post.log_unnormalized(psi), args.repeats
        )
    finally:
        core.ldl_numeric, core.ldl_solve = saved
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--matrix-size", type=int, default=700,
                    help="side of the dense distance/covariance matrices")
    ap.add_argument("--ldl-size", type=int, default=1500,
                    help="dimension of the sparse SPD test matrix")
    ap.add_argument("--n-rhs", type=int, default=64)
    ap.add_argument("--n-obs", type=int, default=800,
                    help="observations for the end-to-end density timing")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    pure = load_backend("pure")
    compiled = load_backend("compiled")
    results = {"pure": bench_backend(pure, args)}
    if compiled is None:
        print("compiled backend not built; showing the fallback only\n")
    else:
        results["compiled"] = bench_backend(compiled, args)

    names = list(results["pure"])
    width = max(len(n) for n in names)
    header = f"{'kernel':<{width}}  " + "".join(f"{b:>12}" for b in results)
    if len(results) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name in names:
        row = f"{name:<{width}}  "
        for b in results:
            row += f"{results[b][name] * 1e3:>10.2f}ms"
        if len(results) == 2:
            row += f"{results['pure'][name] / results['compiled'][name]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
