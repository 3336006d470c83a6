import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from mragp.geo import PointSet, SpatioTemporalPoint
from mragp.kernels import (
    NUGGET,
    HyperParams,
    PriorSpec,
    cov_matrix,
    cov_st,
    log_hyper_prior,
    matern15,
    temporal_corr,
)


def make_psi(sigma=1.0, rho=5.0, phi=3.0, zeta=0.5):
    return HyperParams(
        log_sigma=math.log(sigma),
        log_rho=math.log(rho),
        log_phi=math.log(phi),
        log_zeta=math.log(zeta),
    )


class TestMatern:
    def test_unit_at_zero(self):
        assert matern15(0.0, 5.0) == 1.0

    def test_closed_form(self):
        # independent evaluation of (1 + sqrt(3) d / rho) exp(-sqrt(3) d / rho)
        d, rho = 2.7, 4.1
        x = math.sqrt(3.0) * d / rho
        assert matern15(d, rho) == pytest.approx((1 + x) * math.exp(-x), rel=1e-14)

    @given(st.floats(0.001, 1e4), st.floats(0.01, 1e3))
    @settings(max_examples=200, deadline=None)
    def test_in_unit_interval(self, d, rho):
        # zero is reachable through exp underflow at extreme d/rho
        v = matern15(d, rho)
        assert 0.0 <= v <= 1.0

    def test_monotone_decreasing(self):
        d = np.linspace(0, 50, 200)
        v = matern15(d, 5.0)
        assert np.all(np.diff(v) < 0)


class TestTemporal:
    def test_exponential_form(self):
        assert temporal_corr(2.0, 4.0) == pytest.approx(math.exp(-0.5), rel=1e-14)

    def test_unit_at_zero(self):
        assert temporal_corr(0.0, 3.0) == 1.0


class TestHyperParams:
    def test_natural_scale_properties(self):
        psi = make_psi(sigma=2.0, rho=7.0, phi=3.5, zeta=0.25)
        assert psi.sigma == pytest.approx(2.0)
        assert psi.rho == pytest.approx(7.0)
        assert psi.phi == pytest.approx(3.5)
        assert psi.zeta == pytest.approx(0.25)

    def test_vector_roundtrip(self):
        psi = make_psi(1.5, 2.5, 3.5, 0.7)
        again = HyperParams.from_vector(psi.as_vector())
        assert again == psi

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            HyperParams(
                log_sigma=float("nan"), log_rho=0.0, log_phi=0.0, log_zeta=0.0
            )


class TestCovMatrix:
    def test_separable_product(self):
        psi = make_psi(sigma=2.0)
        a = SpatioTemporalPoint(73.2, 18.6, 0)
        b = SpatioTemporalPoint(73.3, 18.7, 2)
        from mragp.geo import haversine_km

        d = haversine_km(a, b)
        expected = 4.0 * matern15(d, psi.rho) * temporal_corr(2.0, psi.phi)
        assert cov_st(a, b, psi) == pytest.approx(expected, rel=1e-12)

    def test_diagonal_nugget_on_shared_pointset(self):
        psi = make_psi(sigma=3.0)
        ps = PointSet([1.0, 1.0], [2.0, 2.0], [0, 0])  # two IDENTICAL points
        c = cov_matrix(ps, ps, psi)
        # same-set call: ridge on the diagonal only, so the diagonal
        # strictly dominates even with coincident rows
        assert c[0, 0] == pytest.approx(9.0 * (1.0 + NUGGET))
        assert c[0, 1] == pytest.approx(9.0)
        assert np.linalg.eigvalsh(c).min() > 0

    def test_cross_call_flags_exact_coincidence(self):
        psi = make_psi(sigma=3.0)
        a = PointSet([1.0, 5.0], [2.0, 6.0], [0, 1])
        b = PointSet([1.0], [2.0], [0])
        c = cov_matrix(a, b, psi)
        assert c[0, 0] == pytest.approx(9.0 * (1.0 + NUGGET))
        assert c[1, 0] < 9.0

    def test_same_content_different_objects(self):
        psi = make_psi()
        a = PointSet([1.0, 2.0], [3.0, 4.0], [0, 1])
        b = PointSet([1.0, 2.0], [3.0, 4.0], [0, 1])
        assert np.array_equal(cov_matrix(a, b, psi), cov_matrix(a, a, psi))

    def test_symmetric_and_pd(self):
        rng = np.random.default_rng(0)
        ps = PointSet(
            rng.uniform(73.2, 73.4, 40),
            rng.uniform(18.6, 18.8, 40),
            rng.integers(0, 3, 40),
        )
        c = cov_matrix(ps, ps, make_psi())
        assert np.array_equal(c, c.T)
        assert np.linalg.eigvalsh(c).min() > 0


class TestPriorSpec:
    def test_defaults(self):
        pr = PriorSpec()
        assert pr.beta_prior_var == 100.0
        assert pr.hyper_prior_sd == (2.0, 2.0, 2.0, 2.0)
        assert pr.fixed_log_zeta == pytest.approx(math.log(0.5))
        assert pr.n_free == 3

    def test_pack_unpack_roundtrip(self):
        pr = PriorSpec()
        psi = make_psi(2.0, 5.0, 3.0, 0.5)
        free = pr.pack(psi)
        assert len(free) == 3
        back = pr.unpack(free)
        assert back == psi

    def test_unpack_inserts_fixed_values(self):
        pr = PriorSpec(fixed_log_sigma=0.25)
        assert pr.n_free == 2
        psi = pr.unpack([1.0, 2.0])
        assert psi.log_sigma == 0.25
        assert psi.log_rho == 1.0
        assert psi.log_phi == 2.0

    def test_fully_fixed(self):
        pr = PriorSpec(fixed_log_sigma=0.1, fixed_log_rho=0.2, fixed_log_phi=0.3)
        assert pr.n_free == 0
        psi = pr.unpack([])
        assert psi.log_phi == 0.3

    def test_start_point_is_prior_mean(self):
        pr = PriorSpec(hyper_prior_mean=(1.0, 2.0, 3.0, 4.0))
        assert pr.start_point().tolist() == [1.0, 2.0, 3.0]


class TestLogHyperPrior:
    def test_matches_normal_logpdf_oracle(self):
        pr = PriorSpec(hyper_prior_mean=(0.5, -0.5, 1.0, 0.0))
        psi = make_psi(2.0, 4.0, 3.0, 0.5)
        expected = (
            norm.logpdf(psi.log_sigma, 0.5, 2.0)
            + norm.logpdf(psi.log_rho, -0.5, 2.0)
            + norm.logpdf(psi.log_phi, 1.0, 2.0)
        )  # zeta fixed: excluded
        assert log_hyper_prior(psi, pr) == pytest.approx(expected, rel=1e-12)

    def test_free_zeta_included(self):
        pr = PriorSpec(fixed_log_zeta=None)
        psi = make_psi()
        expected = sum(
            norm.logpdf(v, 0.0, 2.0)
            for v in (psi.log_sigma, psi.log_rho, psi.log_phi, psi.log_zeta)
        )
        assert log_hyper_prior(psi, pr) == pytest.approx(expected, rel=1e-12)
