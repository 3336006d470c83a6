import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mragp.dense import SIZE_CAP, DenseGP, dense_evidence, dense_predict, simulate
from mragp.errors import CapExceededError
from mragp.geo import PointSet
from mragp.kernels import HyperParams, PriorSpec, cov_matrix

PSI = HyperParams(np.log(4.0), np.log(5.0), np.log(3.5), np.log(0.5))


def make_points(n, seed, days=3):
    rng = np.random.default_rng(seed)
    return PointSet(
        rng.uniform(73.2, 73.4, n),
        rng.uniform(18.6, 18.8, n),
        rng.integers(0, days, n),
    )


class TestSimulate:
    def test_deterministic(self):
        pts = make_points(20, 0)
        X = np.column_stack([np.ones(20), np.arange(20.0)])
        beta = np.array([1.0, -0.2])
        a = simulate(pts, X, beta, PSI, seed=7)
        b = simulate(pts, X, beta, PSI, seed=7)
        assert np.array_equal(a, b)
        c = simulate(pts, X, beta, PSI, seed=8)
        assert not np.array_equal(a, c)

    def test_noiseless_scale_free_recovers_trend(self):
        # sigma -> 0 and zeta -> 0 leaves only the fixed effects
        pts = make_points(15, 1)
        X = np.column_stack([np.ones(15), np.linspace(0, 1, 15)])
        beta = np.array([2.0, 3.0])
        psi = HyperParams(np.log(1e-12), PSI.log_rho, PSI.log_phi, np.log(1e-12))
        y = simulate(pts, X, beta, psi, seed=2)
        assert np.allclose(y, X @ beta, atol=1e-9)

    def test_sample_moments(self):
        # many independent replicates at a single location
        pts = PointSet([73.3], [18.7], [0])
        X = np.zeros((1, 1))
        draws = np.array(
            [simulate(pts, X, np.zeros(1), PSI, seed=s)[0] for s in range(4000)]
        )
        total_var = PSI.sigma ** 2 * (1 + 1e-5) + PSI.zeta ** 2
        assert abs(draws.mean()) < 4.0 * np.sqrt(total_var / 4000)
        assert draws.var() == pytest.approx(total_var, rel=0.1)

    def test_shape_mismatch(self):
        pts = make_points(5, 3)
        with pytest.raises(ValueError):
            simulate(pts, np.ones((5, 2)), np.zeros(3), PSI, seed=0)


class TestCap:
    def test_dense_gp_cap(self):
        n = SIZE_CAP + 1
        rng = np.random.default_rng(4)
        pts = PointSet(
            rng.uniform(73.2, 73.4, n),
            rng.uniform(18.6, 18.8, n),
            np.zeros(n, dtype=int),
        )
        with pytest.raises(CapExceededError):
            DenseGP(pts, PSI)

    def test_prediction_cap_counts_joint(self):
        n = SIZE_CAP // 2 + 1
        rng = np.random.default_rng(5)
        pts = PointSet(
            rng.uniform(73.2, 73.4, n),
            rng.uniform(18.6, 18.8, n),
            np.zeros(n, dtype=int),
        )
        X = np.ones((n, 1))
        with pytest.raises(CapExceededError):
            dense_predict(np.zeros(n), X, pts, X, pts, PSI, PriorSpec())


class TestEvidence:
    def test_matches_scipy_logpdf(self):
        n = 30
        pts = make_points(n, 6)
        rng = np.random.default_rng(7)
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        y = rng.standard_normal(n) * 2.0
        priors = PriorSpec(beta_prior_var=50.0)
        cov = (
            50.0 * (X @ X.T)
            + cov_matrix(pts, pts, PSI)
            + PSI.zeta ** 2 * np.eye(n)
        )
        expected = multivariate_normal.logpdf(y, mean=np.zeros(n), cov=cov)
        got = dense_evidence(y, X, pts, PSI, priors)
        assert got == pytest.approx(float(expected), abs=1e-9)

    def test_no_covariates(self):
        n = 12
        pts = make_points(n, 8)
        y = np.random.default_rng(9).standard_normal(n)
        cov = cov_matrix(pts, pts, PSI) + PSI.zeta ** 2 * np.eye(n)
        expected = multivariate_normal.logpdf(y, mean=np.zeros(n), cov=cov)
        got = dense_evidence(y, np.zeros((n, 0)), pts, PSI, PriorSpec())
        assert got == pytest.approx(float(expected), abs=1e-10)


class TestPredict:
    def _kriging_oracle(self, y, X, pts, pred_X, ppts, psi, priors):
        """Joint-covariance conditioning written out block by block."""
        n, m = len(pts), len(ppts)
        bv = priors.beta_prior_var
        z2 = psi.zeta ** 2
        big_pts = PointSet.concat([pts, ppts])
        big_X = np.vstack([X, pred_X])
        k = cov_matrix(big_pts, big_pts, psi) + bv * (big_X @ big_X.T)
        k += z2 * np.eye(n + m)
        k_oo = k[:n, :n]
        k_po = k[n:, :n]
        k_pp = k[n:, n:]
        inv = np.linalg.inv(k_oo)
        mean = k_po @ inv @ y
        cov = k_pp - k_po @ inv @ k_po.T
        return mean, np.diag(cov).copy()

    def test_matches_hand_kriging(self):
        n, m = 35, 9
        pts = make_points(n, 10)
        ppts = make_points(m, 11)
        rng = np.random.default_rng(12)
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        pred_X = np.column_stack([np.ones(m), rng.standard_normal(m)])
        y = rng.standard_normal(n) * 3.0
        priors = PriorSpec()
        got_m, got_v = dense_predict(y, X, pts, pred_X, ppts, PSI, priors)

        exp_m, exp_v = self._kriging_oracle(y, X, pts, pred_X, ppts, PSI, priors)
        assert np.allclose(got_m, exp_m, atol=1e-8)
        assert np.allclose(got_v, exp_v, atol=1e-8)

    def test_predicting_at_training_point_shrinks_variance(self):
        n = 25
        pts = make_points(n, 13)
        X = np.ones((n, 1))
        y = np.random.default_rng(14).standard_normal(n)
        far = PointSet([73.9], [18.2], [0])
        near = pts.subset([0])
        _, v_near = dense_predict(y, X, pts, np.ones((1, 1)), near, PSI, PriorSpec())
        _, v_far = dense_predict(y, X, pts, np.ones((1, 1)), far, PSI, PriorSpec())
        assert v_near[0] < v_far[0]
        # new-observation prediction keeps the noise floor
        assert v_near[0] > PSI.zeta ** 2

    def test_interpolates_in_low_noise_limit(self):
        n = 15
        pts = make_points(n, 15)
        X = np.zeros((n, 0))
        psi = HyperParams(PSI.log_sigma, PSI.log_rho, PSI.log_phi, np.log(1e-6))
        y = np.random.default_rng(16).standard_normal(n)
        mean, var = dense_predict(y, X, pts, X, pts, psi, PriorSpec())
        assert np.allclose(mean, y, atol=1e-3)

    def test_covariate_dimension_mismatch(self):
        pts = make_points(5, 17)
        with pytest.raises(ValueError):
            dense_predict(
                np.zeros(5), np.ones((5, 2)), pts, np.ones((5, 1)), pts, PSI, PriorSpec()
            )
