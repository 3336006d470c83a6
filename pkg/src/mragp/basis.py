"""Multi-resolution basis construction and the Gaussian full conditional.

The latent field is approximated by a sum over resolutions of local basis
functions. Within each region the basis functions are covariances with the
region's knots, conditioned on all coarser knots along the region's
ancestor path; the coefficient vector of a region is Gaussian with
covariance equal to the INVERSE of the knots' conditional covariance
block. Consequently the coefficient prior precision is that block itself,
which is what gets added to the precision of the full conditional; no
block inversions anywhere.

Conditioning is applied recursively. With V_0 = base covariance and
Q_l the knots of the level-l ancestor,

    V_{l+1}(A, B) = V_l(A, B) - V_l(A, Q_l) V_l(Q_l, Q_l)^{-1} V_l(Q_l, B)

so each region stores its conditional cross-covariances against every
ancestor plus the Cholesky factor of its own conditional block, making
basis evaluation for a point cost polynomial in the path knot count and
never in the number of observations.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import MragpError, SingularBlockError
from .geo import PointSet, as_point_set, pair_geometry
from .kernels import HyperParams, PriorSpec, cov_from_geometry
from .partition import RegionTree
from .sparse import SparseMatrix, SparseSymMatrix, SymbolicFactor, analyze, factorize


class _RegionNode:
    """Layout entry for one region: knots, ancestors, columns, geometry."""

    __slots__ = ("region", "level", "bfs", "anc", "col_lo", "col_hi", "self_geom", "anc_geom")

    def __init__(self, region, level, bfs, anc):
        self.region = region
        self.level = level
        self.bfs = bfs
        self.anc = anc


class BasisLayout:
    """Hyperparameter-independent structure shared by all basis systems.

    Holds the breadth-first region order, the coefficient column layout
    (coarse blocks first), and cached pairwise geometry (distances, day
    gaps, coincidence indices) between each region's knots and all of its
    ancestors' knots.
    """

    def __init__(self, tree: RegionTree):
        for r in tree.regions():
            if r.knots is None:
                raise MragpError("tree has no knots; call place_knots first")
        self.tree = tree
        self.nodes = []
        bfs_of_region = {}
        col = 0
        for level in tree.levels:
            for r in level:
                anc = [bfs_of_region[id(a)] for a in r.ancestors()]
                node = _RegionNode(r, r.level, len(self.nodes), anc)
                node.col_lo = col
                node.col_hi = col + len(r.knots)
                col += len(r.knots)
                bfs_of_region[id(r)] = node.bfs
                self.nodes.append(node)
        self.n_cols = col
        for node in self.nodes:
            node.self_geom = pair_geometry(node.region.knots, node.region.knots, same=True)
            node.anc_geom = [
                pair_geometry(node.region.knots, self.nodes[a].region.knots)
                for a in node.anc
            ]
        self.leaf_nodes = [
            self.nodes[len(self.nodes) - len(tree.leaves) + i]
            for i in range(len(tree.leaves))
        ]

    def leaf_path(self, leaf_node):
        """BFS indices of the regions on the leaf's root-to-leaf path."""
        return leaf_node.anc + [leaf_node.bfs]


def build_layout(tree: RegionTree) -> BasisLayout:
    return BasisLayout(tree)


class GammaBlocks:
    """Per-region conditional knot covariance blocks with their Cholesky factors.

    These blocks are simultaneously the coefficient prior PRECISIONS (the
    coefficient covariance is their inverse); they are stored factored and
    the inverse is never formed.
    """

    def __init__(self, blocks, labels=None):
        self.blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
        self.labels = labels or [f"block{i}" for i in range(len(blocks))]
        self.chols = []
        self.logdets = []
        for b, lab in zip(self.blocks, self.labels):
            try:
                c = cho_factor(b, lower=True)
            except LinAlgError as e:
                cond = float(np.linalg.cond(b)) if b.size else float("inf")
                raise SingularBlockError(
                    f"conditional covariance block at {lab} is not positive definite "
                    f"(condition estimate {cond:.3e})",
                    region_path=lab,
                    condition=cond,
                ) from e
            self.chols.append(c)
            self.logdets.append(2.0 * float(np.sum(np.log(np.diag(c[0])))))
        widths = np.array([b.shape[0] for b in self.blocks], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(widths)])[:-1]
        self.total_cols = int(widths.sum()) if len(widths) else 0
        self.sum_logdet = float(np.sum(self.logdets)) if self.logdets else 0.0

    @classmethod
    def from_knot_covariances(cls, blocks, labels=None) -> "GammaBlocks":
        return cls(blocks, labels)

    def quad(self, eta) -> float:
        """eta' K eta summed over blocks, for a full coefficient vector."""
        eta = np.asarray(eta, dtype=np.float64)
        total = 0.0
        for b, off in zip(self.blocks, self.offsets):
            e = eta[off : off + b.shape[0]]
            total += float(e @ (b @ e))
        return total


class BasisSystem:
    """Per-hyperparameter workspaces: conditional crosses and solve factors.

    For region r with ancestors a_0..a_{k-1}:
      cross[l]  = V_l(knots_r, knots_{a_l})
      usolve[l] = K_{a_l}^{-1} cross[l]'   (via the ancestor's Cholesky)
    and the region's own conditional block K_r goes into GammaBlocks.
    """

    def __init__(self, layout: BasisLayout, psi: HyperParams):
        self.layout = layout
        self.psi = psi
        self.cross = []
        self.usolve = []
        blocks = []
        labels = []
        for node in layout.nodes:
            crosses = []
            usolves = []
            for m, a_bfs in enumerate(node.anc):
                geom = node.anc_geom[m]
                mat = cov_from_geometry(*geom, psi)
                for l in range(m):
                    mat -= crosses[l] @ self.usolve[node.anc[m]][l]
                crosses.append(mat)
            block = cov_from_geometry(*node.self_geom, psi)
            for l, a_bfs in enumerate(node.anc):
                u = cho_solve(self._chol(a_bfs, blocks), crosses[l].T)
                usolves.append(u)
                block = block - crosses[l] @ u
            block = 0.5 * (block + block.T)
            self.cross.append(crosses)
            self.usolve.append(usolves)
            blocks.append(block)
            labels.append(node.region.path)
        self.gamma = GammaBlocks(blocks, labels)

    def _chol(self, bfs, blocks):
        # Cholesky of an already-built ancestor block; cached per system
        if not hasattr(self, "_chol_cache"):
            self._chol_cache = {}
        if bfs not in self._chol_cache:
            b = blocks[bfs]
            try:
                self._chol_cache[bfs] = cho_factor(b, lower=True)
            except LinAlgError as e:
                node = self.layout.nodes[bfs]
                cond = float(np.linalg.cond(b))
                raise SingularBlockError(
                    f"conditional covariance block at {node.region.path} is not "
                    f"positive definite (condition estimate {cond:.3e})",
                    region_path=node.region.path,
                    condition=cond,
                ) from e
        return self._chol_cache[bfs]

    def point_blocks(self, pts: PointSet, path, geoms=None):
        """Conditional cross-covariances of pts against each path region's knots.

        path: BFS indices root..leaf; geoms: optional precomputed geometry
        (one pair_geometry result per path region).
        """
        blocks = []
        for m, bfs in enumerate(path):
            node = self.layout.nodes[bfs]
            if geoms is None:
                g = pair_geometry(pts, node.region.knots)
            else:
                g = geoms[m]
            mat = cov_from_geometry(*g, self.psi)
            for l in range(m):
                mat -= blocks[l] @ self.usolve[bfs][l]
            blocks.append(mat)
        return blocks


def build_gamma_and_bases(tree_or_layout, psi: HyperParams):
    """Conditional covariance blocks plus basis workspaces for one psi."""
    layout = (
        tree_or_layout
        if isinstance(tree_or_layout, BasisLayout)
        else BasisLayout(tree_or_layout)
    )
    system = BasisSystem(layout, psi)
    return system.gamma, system


def evaluate_basis_row(system: BasisSystem, point) -> np.ndarray:
    """Dense basis row (length = total coefficient columns) for one point."""
    pts = as_point_set([point]) if not isinstance(point, PointSet) else point
    if len(pts) != 1:
        raise ValueError("evaluate_basis_row expects a single point")
    layout = system.layout
    leaf_idx = int(layout.tree.route(pts)[0, -1])
    leaf = layout.leaf_nodes[leaf_idx]
    path = layout.leaf_path(leaf)
    blocks = system.point_blocks(pts, path)
    row = np.zeros(layout.n_cols)
    for bfs, b in zip(path, blocks):
        node = layout.nodes[bfs]
        row[node.col_lo : node.col_hi] = b[0]
    return row


class BoundPoints:
    """A point collection routed to leaves with cached per-leaf geometry.

    Building one of these once per point set amortizes the distance
    computations across every hyperparameter draw.
    """

    def __init__(self, layout: BasisLayout, points):
        self.layout = layout
        self.points = as_point_set(points)
        routes = layout.tree.route(self.points) if len(self.points) else None
        self.groups = []
        if routes is not None:
            leaf_col = routes[:, -1]
            for leaf_idx, leaf in enumerate(layout.leaf_nodes):
                rows = np.flatnonzero(leaf_col == leaf_idx)
                if not len(rows):
                    continue
                pts = self.points.subset(rows)
                path = layout.leaf_path(leaf)
                geoms = [
                    pair_geometry(pts, layout.nodes[bfs].region.knots) for bfs in path
                ]
                self.groups.append(
                    {"rows": rows, "points": pts, "path": path, "geoms": geoms}
                )
        self._f_pattern = None
        self._h_patterns = {}

    def __len__(self):
        return len(self.points)

    def _build_f_pattern(self):
        layout = self.layout
        rows_all, cols_all = [], []
        for g in self.groups:
            nr = len(g["rows"])
            for bfs in g["path"]:
                node = layout.nodes[bfs]
                w = node.col_hi - node.col_lo
                rows_all.append(np.tile(g["rows"], w))
                cols_all.append(np.repeat(np.arange(node.col_lo, node.col_hi), nr))
        if rows_all:
            rows_all = np.concatenate(rows_all)
            cols_all = np.concatenate(cols_all)
        else:
            rows_all = np.zeros(0, dtype=np.int64)
            cols_all = np.zeros(0, dtype=np.int64)
        order = np.lexsort((rows_all, cols_all))
        indptr = np.zeros(layout.n_cols + 1, dtype=np.int64)
        np.add.at(indptr, cols_all + 1, 1)
        np.cumsum(indptr, out=indptr)
        self._f_pattern = (indptr, rows_all[order], order)

    def _f_values(self, system: BasisSystem):
        """Column-major value vector aligned with the cached F pattern."""
        vals = []
        for g in self.groups:
            blocks = system.point_blocks(g["points"], g["path"], g["geoms"])
            for b in blocks:
                vals.append(b.T.ravel())
        return np.concatenate(vals) if vals else np.zeros(0)


def basis_matrix(system: BasisSystem, bound: BoundPoints) -> SparseMatrix:
    """The sparse basis matrix F for a bound point collection."""
    if bound._f_pattern is None:
        bound._build_f_pattern()
    indptr, indices, order = bound._f_pattern
    data = bound._f_values(system)[order]
    return SparseMatrix(len(bound), system.layout.n_cols, indptr, indices, data)


def assemble_H(system: BasisSystem, X, bound: BoundPoints) -> SparseMatrix:
    """The design matrix [X | F]; the covariate block is stored dense."""
    X = np.asarray(X, dtype=np.float64)
    n = len(bound)
    if X.ndim != 2 or X.shape[0] != n:
        raise ValueError("X must be (n_points, p)")
    p = X.shape[1]
    f = basis_matrix(system, bound)
    indptr_x = np.arange(p + 1, dtype=np.int64) * n
    indices_x = np.tile(np.arange(n, dtype=np.int64), p)
    data_x = X.T.ravel()
    indptr = np.concatenate([indptr_x, indptr_x[-1] + f.indptr[1:]])
    indices = np.concatenate([indices_x, f.indices])
    data = np.concatenate([data_x, f.data])
    return SparseMatrix(n, p + f.n_cols, indptr, indices, data)


class FullConditional:
    """Posterior of the mean parameters given y and one hyperparameter value.

    mean = Q^{-1} xi with Q the sparse precision; carries the factorization
    and the cached scalars the posterior density needs.
    """

    def __init__(
        self,
        mean,
        factor,
        q_lower,
        xi,
        gamma,
        priors,
        psi,
        n_obs,
        p,
        rss,
        design=None,
        design_blocks=None,
        y=None,
    ):
        self.mean = mean
        self.factor = factor
        self.q_lower = q_lower
        self.xi = xi
        self.gamma = gamma
        self.priors = priors
        self.psi = psi
        self.n_obs = n_obs
        self.p = p
        self.rss = rss
        self.design = design
        self.design_blocks = design_blocks
        self.y = y
        self.logdet_q = factor.logdet()
        self.zeta2 = psi.zeta ** 2

    @property
    def n_params(self) -> int:
        return self.p + self.gamma.total_cols

    @property
    def q_nnz_full(self) -> int:
        return self.q_lower.nnz_full

    def quad_prior_at(self, v) -> float:
        """v' PriorPrecision v: fixed-effect part plus coefficient blocks."""
        v = np.asarray(v, dtype=np.float64)
        beta = v[: self.p]
        out = float(beta @ beta) / self.priors.beta_prior_var
        return out + self.gamma.quad(v[self.p :])

    def design_apply(self, v) -> np.ndarray:
        """H v, available when the design was retained."""
        if self.design is not None:
            return self.design.matvec(v)
        if self.design_blocks is not None:
            out = np.zeros(self.n_obs)
            for rows, cols, g in self.design_blocks:
                out[rows] = g @ v[cols]
            return out
        raise MragpError("design matrix was not retained on this full conditional")

    def rss_at(self, v) -> float:
        r = self.y - self.design_apply(v)
        return float(r @ r)

    def conditional_var(self, indices) -> np.ndarray:
        """Diagonal entries of Q^{-1} at the requested parameter indices."""
        indices = np.asarray(indices, dtype=np.int64)
        rhs = np.zeros((self.n_params, len(indices)))
        rhs[indices, np.arange(len(indices))] = 1.0
        sol = self.factor.solve(rhs)
        return sol[indices, np.arange(len(indices))]


def _finalize(q_lower, xi, gamma, priors, psi, n_obs, p, sym, **kw):
    if sym is None:
        sym = analyze(q_lower)
    factor = factorize(sym, q_lower)
    mean = factor.solve(xi)
    fc = FullConditional(
        mean, factor, q_lower, xi, gamma, priors, psi, n_obs, p, rss=None, **kw
    )
    fc._sym = sym
    return fc


def build_full_conditional(
    H: SparseMatrix,
    gamma: GammaBlocks,
    y,
    psi: HyperParams,
    priors: PriorSpec,
    sym: SymbolicFactor | None = None,
) -> FullConditional:
    """Assemble and factorize the full conditional from an explicit design.

    Q = blockdiag(I_p / beta_prior_var, knot blocks) + H'H / zeta^2 and
    xi = H'y / zeta^2. This is the general route; the fitting pipeline uses
    an equivalent leaf-blocked assembly that keeps the sparsity pattern
    bit-identical across hyperparameter draws.
    """
    import scipy.sparse as sp

    y = np.asarray(y, dtype=np.float64)
    hs = H.to_scipy()
    n_obs, q = hs.shape
    p = q - gamma.total_cols
    if p < 0:
        raise ValueError("H has fewer columns than the coefficient blocks")
    zeta2 = psi.zeta ** 2
    parts = []
    if p:
        parts.append(sp.identity(p, format="csc") / priors.beta_prior_var)
    parts.extend(sp.csc_matrix(b) for b in gamma.blocks)
    prior = sp.block_diag(parts, format="csc") if parts else sp.csc_matrix((0, 0))
    qmat = (prior + (hs.T @ hs) / zeta2).tocsc()
    qmat.sort_indices()
    q_lower = SparseSymMatrix.from_scipy_symmetric(qmat)
    xi = (hs.T @ y) / zeta2
    fc = _finalize(q_lower, xi, gamma, priors, psi, n_obs, p, sym, design=H, y=y)
    fc.rss = fc.rss_at(fc.mean)
    return fc


class ConditionalAssembler:
    """Leaf-blocked full-conditional assembly with a frozen sparsity pattern.

    The precision's lower-triangle pattern, the per-leaf scatter maps and
    the prior scatter maps are all computed once per (tree, points, p);
    every hyperparameter draw then only fills values. This guarantees the
    pattern is bit-identical across draws, which lets one symbolic
    factorization serve the entire fit.
    """

    def __init__(self, layout: BasisLayout, bound: BoundPoints, p: int):
        self.layout = layout
        self.bound = bound
        self.p = p
        q = p + layout.n_cols
        self.n_params = q
        leaf_cols = []
        codes = []
        for g in bound.groups:
            cols = [np.arange(p, dtype=np.int64)]
            for bfs in g["path"]:
                node = layout.nodes[bfs]
                cols.append(np.arange(p + node.col_lo, p + node.col_hi, dtype=np.int64))
            cols = np.concatenate(cols)
            leaf_cols.append(cols)
            ii, jj = np.tril_indices(len(cols))
            codes.append(cols[jj] * q + cols[ii])
        prior_codes = []
        if p:
            d = np.arange(p, dtype=np.int64)
            prior_codes.append(d * q + d)
        block_code_list = []
        for node in layout.nodes:
            cols = np.arange(p + node.col_lo, p + node.col_hi, dtype=np.int64)
            ii, jj = np.tril_indices(len(cols))
            bc = cols[jj] * q + cols[ii]
            block_code_list.append(bc)
            prior_codes.append(bc)
        all_codes = np.unique(np.concatenate(codes + prior_codes))
        cols_sorted = all_codes // q
        rows_sorted = all_codes % q
        indptr = np.zeros(q + 1, dtype=np.int64)
        np.add.at(indptr, cols_sorted + 1, 1)
        np.cumsum(indptr, out=indptr)
        self.pattern_indptr = indptr
        self.pattern_indices = rows_sorted
        self.leaf_cols = leaf_cols
        self.leaf_maps = [np.searchsorted(all_codes, c) for c in codes]
        self.leaf_tril = [np.tril_indices(len(c)) for c in leaf_cols]
        self.beta_map = (
            np.searchsorted(all_codes, prior_codes[0]) if p else np.zeros(0, dtype=np.int64)
        )
        self.block_maps = [np.searchsorted(all_codes, bc) for bc in block_code_list]
        self.block_tril = [
            np.tril_indices(node.col_hi - node.col_lo) for node in layout.nodes
        ]
        self.sym = None

    def assemble(
        self,
        system: BasisSystem,
        X,
        y,
        priors: PriorSpec,
        keep_design: bool = False,
    ) -> FullConditional:
        layout = self.layout
        psi = system.psi
        zeta2 = psi.zeta ** 2
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        qdata = np.zeros(len(self.pattern_indices))
        xi = np.zeros(self.n_params)
        gblocks = []
        for g, cols, qmap, (ti, tj) in zip(
            self.bound.groups, self.leaf_cols, self.leaf_maps, self.leaf_tril
        ):
            rows = g["rows"]
            blocks = system.point_blocks(g["points"], g["path"], g["geoms"])
            gmat = np.hstack([X[rows]] + blocks) if self.p else np.hstack(blocks)
            s = gmat.T @ gmat
            qdata[qmap] += s[ti, tj]
            xi[cols] += gmat.T @ y[rows]
            gblocks.append((rows, cols, gmat))
        qdata /= zeta2
        xi /= zeta2
        if self.p:
            qdata[self.beta_map] += 1.0 / priors.beta_prior_var
        for block, bmap, (ti, tj) in zip(
            system.gamma.blocks, self.block_maps, self.block_tril
        ):
            qdata[bmap] += block[ti, tj]
        q_lower = SparseSymMatrix(
            self.n_params, self.pattern_indptr, self.pattern_indices, qdata, check=False
        )
        fc = _finalize(
            q_lower,
            xi,
            system.gamma,
            priors,
            psi,
            len(self.bound),
            self.p,
            self.sym,
            design_blocks=gblocks,
            y=y,
        )
        fc.rss = fc.rss_at(fc.mean)
        if not keep_design:
            fc.design_blocks = None
        if self.sym is None:
            self.sym = fc._sym
        return fc
