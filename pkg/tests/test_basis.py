import numpy as np
import pytest
import scipy.sparse as sp

from mragp.basis import (
    BasisLayout,
    BasisSystem,
    BoundPoints,
    ConditionalAssembler,
    GammaBlocks,
    assemble_H,
    basis_matrix,
    build_full_conditional,
    build_gamma_and_bases,
    evaluate_basis_row,
)
from mragp.errors import SingularBlockError
from mragp.geo import PointSet
from mragp.kernels import HyperParams, PriorSpec, cov_matrix
from mragp.partition import PartitionConfig, build_tree, place_knots

PSI = HyperParams(np.log(4.0), np.log(5.0), np.log(3.5), np.log(0.5))
PSI_B = HyperParams(np.log(2.5), np.log(8.0), np.log(2.0), np.log(0.7))


def make_points(n, seed, days=3):
    rng = np.random.default_rng(seed)
    return PointSet(
        rng.uniform(73.2, 73.4, n),
        rng.uniform(18.6, 18.8, n),
        rng.integers(0, days, n),
    )


@pytest.fixture(scope="module")
def small_tree():
    pts = make_points(120, 0)
    cfg = PartitionConfig(
        n_lon_splits=1, n_lat_splits=1, n_time_splits=0,
        m0=6, growth=2, thinning_rate=0.5,
    )
    tree = build_tree(pts, cfg, seed=1)
    place_knots(tree, seed=2)
    return tree, pts


def conditional_oracle(target_a, target_b, conditioning_sets, psi):
    """Cov(a, b | stacked conditioning knots) by one dense Schur complement.

    Deliberately avoids the level-by-level recursion: one joint matrix,
    one solve.
    """
    c_ab = cov_matrix(target_a, target_b, psi)
    if not conditioning_sets:
        return c_ab
    q = PointSet.concat(conditioning_sets)
    c_qq = cov_matrix(q, q, psi)
    c_aq = cov_matrix(target_a, q, psi)
    c_qb = cov_matrix(q, target_b, psi)
    return c_ab - c_aq @ np.linalg.solve(c_qq, c_qb)


class TestConditionalRecursion:
    def test_cross_blocks_match_dense_oracle(self, small_tree):
        tree, _ = small_tree
        layout = BasisLayout(tree)
        system = BasisSystem(layout, PSI)
        checked = 0
        for bfs, node in enumerate(layout.nodes):
            anc_knots = [layout.nodes[a].region.knots for a in node.anc]
            for l in range(len(node.anc)):
                expected = conditional_oracle(
                    node.region.knots, anc_knots[l], anc_knots[:l], PSI
                )
                got = system.cross[bfs][l]
                assert np.allclose(got, expected, atol=1e-10), node.region.path
                checked += 1
        assert checked > 0

    def test_self_blocks_match_dense_oracle(self, small_tree):
        tree, _ = small_tree
        layout = BasisLayout(tree)
        system = BasisSystem(layout, PSI)
        for bfs, node in enumerate(layout.nodes):
            anc_knots = [layout.nodes[a].region.knots for a in node.anc]
            expected = conditional_oracle(
                node.region.knots, node.region.knots, anc_knots, PSI
            )
            got = system.gamma.blocks[bfs]
            assert np.allclose(got, expected, atol=1e-10), node.region.path

    def test_point_blocks_match_dense_oracle(self, small_tree):
        tree, _ = small_tree
        layout = BasisLayout(tree)
        system = BasisSystem(layout, PSI)
        pts = make_points(7, 99)
        routes = tree.route(pts)
        for i in range(len(pts)):
            one = pts.subset([i])
            leaf = layout.leaf_nodes[int(routes[i, -1])]
            path = layout.leaf_path(leaf)
            blocks = system.point_blocks(one, path)
            anc_knots = [layout.nodes[b].region.knots for b in path]
            for m in range(len(path)):
                expected = conditional_oracle(one, anc_knots[m], anc_knots[:m], PSI)
                assert np.allclose(blocks[m], expected, atol=1e-10)

    def test_build_gamma_and_bases_accepts_tree_or_layout(self, small_tree):
        tree, _ = small_tree
        g1, s1 = build_gamma_and_bases(tree, PSI)
        layout = BasisLayout(tree)
        g2, s2 = build_gamma_and_bases(layout, PSI)
        for a, b in zip(g1.blocks, g2.blocks):
            assert np.array_equal(a, b)


class TestGammaBlocks:
    def test_quad_matches_explicit(self):
        rng = np.random.default_rng(3)
        blocks = []
        for k in (2, 3, 4):
            a = rng.standard_normal((k, k))
            blocks.append(a @ a.T + k * np.eye(k))
        g = GammaBlocks.from_knot_covariances(blocks)
        eta = rng.standard_normal(9)
        dense = np.zeros((9, 9))
        off = 0
        for b in blocks:
            k = b.shape[0]
            dense[off : off + k, off : off + k] = b
            off += k
        assert g.quad(eta) == pytest.approx(eta @ dense @ eta, rel=1e-12)

    def test_sum_logdet(self):
        rng = np.random.default_rng(4)
        blocks = [np.atleast_2d(rng.standard_normal((k, k))) for k in (2, 5)]
        blocks = [b @ b.T + 3 * np.eye(b.shape[0]) for b in blocks]
        g = GammaBlocks(blocks)
        expected = sum(np.linalg.slogdet(b)[1] for b in blocks)
        assert g.sum_logdet == pytest.approx(expected, rel=1e-12)

    def test_singular_block_reports_label(self):
        good = np.eye(2)
        bad = np.array([[1.0, 1.0], [1.0, 1.0]])  # rank 1
        with pytest.raises(SingularBlockError) as exc:
            GammaBlocks([good, bad], labels=["root", "root/1"])
        assert exc.value.region_path == "root/1"


class TestBasisMatrix:
    def test_rows_match_evaluate_basis_row(self, small_tree):
        tree, pts = small_tree
        layout = BasisLayout(tree)
        system = BasisSystem(layout, PSI)
        sample = make_points(9, 7)
        bound = BoundPoints(layout, sample)
        dense = basis_matrix(system, bound).to_scipy().toarray()
        for i in range(len(sample)):
            row = evaluate_basis_row(system, sample.point(i))
            assert np.allclose(dense[i], row, atol=1e-12)

    def test_zero_outside_leaf_path(self, small_tree):
        # finest-level columns of other leaves must be structurally zero
        tree, pts = small_tree
        layout = BasisLayout(tree)
        system = BasisSystem(layout, PSI)
        sample = make_points(9, 8)
        routes = tree.route(sample)
        bound = BoundPoints(layout, sample)
        dense = basis_matrix(system, bound).to_scipy().toarray()
        for i in range(len(sample)):
            path = set(layout.leaf_path(layout.leaf_nodes[int(routes[i, -1])]))
            for bfs, node in enumerate(layout.nodes):
                if bfs not in path:
                    assert not dense[i, node.col_lo : node.col_hi].any()

    def test_assemble_h_prepends_design(self, small_tree):
        tree, pts = small_tree
        layout = BasisLayout(tree)
        system = BasisSystem(layout, PSI)
        sample = make_points(11, 9)
        rng = np.random.default_rng(10)
        X = np.column_stack([np.ones(11), rng.standard_normal(11)])
        bound = BoundPoints(layout, sample)
        h = assemble_H(system, X, bound).to_scipy().toarray()
        b = basis_matrix(system, bound).to_scipy().toarray()
        assert np.array_equal(h[:, :2], X)
        assert np.array_equal(h[:, 2:], b)


def _fit_inputs(small_tree, psi=PSI, n=60, seed=20):
    tree, _ = small_tree
    layout = BasisLayout(tree)
    pts = make_points(n, seed)
    rng = np.random.default_rng(seed + 1)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = rng.standard_normal(n) * 2.0
    return layout, pts, X, y


class TestFullConditional:
    def test_assembler_matches_explicit_route(self, small_tree):
        layout, pts, X, y = _fit_inputs(small_tree)
        priors = PriorSpec()
        system = BasisSystem(layout, PSI)
        bound = BoundPoints(layout, pts)

        h = assemble_H(system, X, bound)
        fc_explicit = build_full_conditional(h, system.gamma, y, PSI, priors)

        assembler = ConditionalAssembler(layout, bound, p=X.shape[1])
        fc_fast = assembler.assemble(system, X, y, priors)

        a = fc_explicit.q_lower.to_scipy_full().toarray()
        b = fc_fast.q_lower.to_scipy_full().toarray()
        assert np.allclose(a, b, atol=1e-9)
        assert np.allclose(fc_explicit.xi, fc_fast.xi, atol=1e-9)
        assert np.allclose(fc_explicit.mean, fc_fast.mean, atol=1e-8)
        assert fc_explicit.rss == pytest.approx(fc_fast.rss, rel=1e-9)
        assert fc_explicit.logdet_q == pytest.approx(fc_fast.logdet_q, rel=1e-10)

    def test_precision_is_prior_plus_scaled_gram(self, small_tree):
        layout, pts, X, y = _fit_inputs(small_tree, n=50, seed=30)
        priors = PriorSpec(beta_prior_var=25.0)
        system = BasisSystem(layout, PSI)
        bound = BoundPoints(layout, pts)
        h = assemble_H(system, X, bound)
        fc = build_full_conditional(h, system.gamma, y, PSI, priors)

        hd = h.to_scipy().toarray()
        p = X.shape[1]
        q_dim = fc.n_params
        prior = np.zeros((q_dim, q_dim))
        prior[:p, :p] = np.eye(p) / priors.beta_prior_var
        off = p
        for b in system.gamma.blocks:
            k = b.shape[0]
            prior[off : off + k, off : off + k] = b
            off += k
        expected = prior + hd.T @ hd / PSI.zeta ** 2
        assert np.allclose(fc.q_lower.to_scipy_full().toarray(), expected, atol=1e-9)
        assert np.allclose(fc.xi, hd.T @ y / PSI.zeta ** 2, atol=1e-10)

    def test_mean_solves_normal_equations(self, small_tree):
        layout, pts, X, y = _fit_inputs(small_tree, n=40, seed=40)
        system = BasisSystem(layout, PSI)
        bound = BoundPoints(layout, pts)
        assembler = ConditionalAssembler(layout, bound, p=X.shape[1])
        fc = assembler.assemble(system, X, y, PriorSpec())
        q = fc.q_lower.to_scipy_full().toarray()
        assert np.allclose(q @ fc.mean, fc.xi, atol=1e-8)

    def test_conditional_var_matches_dense_inverse(self, small_tree):
        layout, pts, X, y = _fit_inputs(small_tree, n=40, seed=41)
        system = BasisSystem(layout, PSI)
        bound = BoundPoints(layout, pts)
        assembler = ConditionalAssembler(layout, bound, p=X.shape[1])
        fc = assembler.assemble(system, X, y, PriorSpec())
        q = fc.q_lower.to_scipy_full().toarray()
        inv = np.linalg.inv(q)
        idx = [0, 1, 5, fc.n_params - 1]
        assert np.allclose(fc.conditional_var(idx), np.diag(inv)[idx], atol=1e-9)

    def test_rss_at_mean(self, small_tree):
        layout, pts, X, y = _fit_inputs(small_tree, n=40, seed=42)
        system = BasisSystem(layout, PSI)
        bound = BoundPoints(layout, pts)
        assembler = ConditionalAssembler(layout, bound, p=X.shape[1])
        fc = assembler.assemble(system, X, y, PriorSpec(), keep_design=True)
        h = assemble_H(system, X, bound).to_scipy().toarray()
        resid = y - h @ fc.mean
        assert fc.rss == pytest.approx(float(resid @ resid), rel=1e-9)
        assert np.allclose(fc.design_apply(fc.mean), h @ fc.mean, atol=1e-10)

    def test_pattern_identical_across_hyperparameters(self, small_tree):
        layout, pts, X, y = _fit_inputs(small_tree, n=55, seed=43)
        bound = BoundPoints(layout, pts)
        assembler = ConditionalAssembler(layout, bound, p=X.shape[1])
        fc1 = assembler.assemble(BasisSystem(layout, PSI), X, y, PriorSpec())
        fc2 = assembler.assemble(BasisSystem(layout, PSI_B), X, y, PriorSpec())
        assert np.array_equal(fc1.q_lower.indptr, fc2.q_lower.indptr)
        assert np.array_equal(fc1.q_lower.indices, fc2.q_lower.indices)
        assert not np.array_equal(fc1.q_lower.data, fc2.q_lower.data)

    def test_symbolic_factor_cached(self, small_tree):
        layout, pts, X, y = _fit_inputs(small_tree, n=35, seed=44)
        bound = BoundPoints(layout, pts)
        assembler = ConditionalAssembler(layout, bound, p=X.shape[1])
        assembler.assemble(BasisSystem(layout, PSI), X, y, PriorSpec())
        first = assembler.sym
        assert first is not None
        assembler.assemble(BasisSystem(layout, PSI_B), X, y, PriorSpec())
        assert assembler.sym is first

    def test_scipy_route_prunes_nothing_structural(self, small_tree):
        # the assembler's frozen pattern must be a superset of the value
        # pattern scipy keeps after pruning exact zeros
        layout, pts, X, y = _fit_inputs(small_tree, n=45, seed=45)
        system = BasisSystem(layout, PSI)
        bound = BoundPoints(layout, pts)
        h = assemble_H(system, X, bound)
        fc_explicit = build_full_conditional(h, system.gamma, y, PSI, PriorSpec())
        assembler = ConditionalAssembler(layout, bound, p=X.shape[1])
        fc_fast = assembler.assemble(system, X, y, PriorSpec())
        assert fc_fast.q_lower.nnz_lower >= fc_explicit.q_lower.nnz_lower
