"""ECF core tests: scores, cf covariance, closed-form asymptotics, weightings."""

import numpy as np
import pytest

from levyecf import (FreqGrid, IdentifiabilityError, NoiseModel, WeightMatrix, c_matrix,
                     kron_weight, noise_score, sigma_eta, sigma_theta)
from levyecf.ecf import expected_score, weight_solve

GAUSS = NoiseModel("gaussian", [0.0, 1.0])
GAUSS_MU = NoiseModel("gaussian", [0.0, 1.0], free=(0,))
VG = NoiseModel("variance_gamma", [1.0, 0.5, 0.0])
NIG = NoiseModel("normal_inverse_gaussian", [2.0, 0.5, 1.0, 0.1])


class TestFreqGrid:
    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            FreqGrid([0.0, 1.0])

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            FreqGrid([1.0, 1.0])

    def test_equispaced(self):
        g = FreqGrid.equispaced(10, 2.0)
        assert g.m == 10
        assert g.u[0] == pytest.approx(0.2)
        assert g.u[-1] == pytest.approx(2.0)


class TestNoiseScore:
    def test_bounded_by_two(self):
        rng = np.random.default_rng(0)
        grid = FreqGrid(rng.uniform(0.1, 4, 7))
        for y in rng.normal(size=50):
            assert np.all(np.abs(noise_score(y, GAUSS, grid)) <= 2.0)

    def test_value_at_zero_datum(self):
        grid = FreqGrid([1.0])
        h = noise_score(0.0, GAUSS, grid)
        assert h[0] == pytest.approx(1 - np.exp(-0.5), abs=1e-12)

    def test_mean_zero_at_truth(self):
        grid = FreqGrid.equispaced(8, 2.0)
        y = GAUSS.sample(10**6, 42).values
        avg = noise_score(y, GAUSS, grid).mean(axis=0)
        assert np.max(np.abs(avg)) < 5e-3


class TestCMatrix:
    def test_gaussian_diagonal_closed_form(self):
        c = c_matrix(GAUSS, FreqGrid([1.0]))
        assert c[0, 0] == pytest.approx(1 - np.exp(-1.0), abs=1e-10)

    def test_zero_frequency_formula_value(self):
        # FreqGrid rejects u=0; the raw formula gives 1 - 1 = 0 there.
        c = c_matrix(GAUSS, np.array([0.0]), regularize=False)
        assert c[0, 0] == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("model", [GAUSS, VG, NIG])
    def test_matches_sample_covariance(self, model):
        rng = np.random.default_rng(17)
        grid = FreqGrid(rng.uniform(0.2, 2.5, 5))
        c = c_matrix(model, grid)
        y = model.sample(10**6, 55).values
        z = np.exp(1j * np.outer(y, grid.u))
        zc = z - z.mean(axis=0)
        sample_cov = zc.T @ zc.conj() / y.size  # E[(Z_k - m_k) conj(Z_l - m_l)]
        assert np.max(np.abs(c - sample_cov)) < 5e-3
        assert np.max(np.abs(c - np.cov(z.T, bias=True))) < 5e-3

    def test_hermitian_and_near_psd(self):
        for model in (GAUSS, VG, NIG):
            grid = FreqGrid.equispaced(10, 3.0)
            c = c_matrix(model, grid, regularize=False)
            np.testing.assert_allclose(c, c.conj().T, atol=1e-15)
            evals = np.linalg.eigvalsh(c)
            assert evals[0] >= -1e-10 * np.linalg.norm(c)


class TestWeightMatrix:
    def test_kinds(self):
        grid = FreqGrid.equispaced(4, 2.0)
        assert np.allclose(WeightMatrix("identity").matrix(GAUSS, grid), np.eye(4))
        k = WeightMatrix("c_at_eta").matrix(GAUSS, grid)
        np.testing.assert_allclose(k, c_matrix(GAUSS, grid))
        custom = WeightMatrix("custom", value=2.0 * np.eye(3))
        assert custom.matrix(GAUSS, grid).shape == (3, 3)

    def test_custom_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            WeightMatrix("custom", value=np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_quadratic_form_nonnegative_all_kinds(self):
        rng = np.random.default_rng(3)
        grid = FreqGrid.equispaced(6, 2.0)
        mats = [WeightMatrix("identity").matrix(GAUSS, grid),
                WeightMatrix("c_at_eta").matrix(GAUSS, grid)]
        for k_mat in mats:
            for _ in range(500):
                x = rng.normal(size=6) + 1j * rng.normal(size=6)
                val = np.real(x.conj() @ weight_solve(k_mat, x))
                assert val >= -1e-10


class TestSigmaEta:
    def test_location_only_single_frequency(self):
        s = sigma_eta(GAUSS_MU, FreqGrid([1.0]))
        assert s.shape == (1, 1)
        assert s[0, 0] == pytest.approx(np.e - 1.0, rel=1e-9)

    def test_dense_grid_approaches_crlb(self):
        # 41 equispaced points on [-4, 4] minus the forbidden origin
        pts = np.linspace(-4, 4, 41)
        grid = FreqGrid(pts[pts != 0.0])
        s = sigma_eta(GAUSS_MU, grid)
        assert s[0, 0] == pytest.approx(1.0, rel=0.05)
        assert s[0, 0] >= 1.0 - 1e-9  # never beats the Fisher bound

    @pytest.mark.parametrize("model", [GAUSS, VG, NIG])
    def test_symmetric_positive_definite(self, model):
        s = sigma_eta(model, FreqGrid.equispaced(12, 2.5))
        np.testing.assert_allclose(s, s.T, atol=1e-12)
        assert np.linalg.eigvalsh(s)[0] > 0

    def test_loewner_monotone_in_grid(self):
        # well-separated frequencies: near-duplicates make C numerically singular
        # (the ill-conditioned regime) and the protective ridge then breaks exact
        # monotonicity
        rng = np.random.default_rng(8)
        for _ in range(5):
            pts = np.sort(rng.uniform(0.2, 4.0, 16))
            pts = pts[np.concatenate([[True], np.diff(pts) > 0.1])]
            base, extra = pts[:4], pts[4:8]
            s_small = sigma_eta(GAUSS, FreqGrid(base))
            s_big = sigma_eta(GAUSS, FreqGrid(np.concatenate([base, extra])))
            evals = np.linalg.eigvalsh(s_small - s_big)
            assert evals[0] >= -1e-8

    def test_rank_deficiency_reported(self):
        with pytest.raises(IdentifiabilityError):
            sigma_eta(GAUSS, FreqGrid([1.0]))  # M=1 < 2 free parameters


class TestSigmaTheta:
    def test_single_frequency_closed_form(self):
        s = sigma_theta(GAUSS, FreqGrid([1.0]), np.eye(1))
        assert s[0, 0] == pytest.approx(np.e - 1.0, rel=1e-9)

    def test_linear_in_inverse_r_p(self):
        grid = FreqGrid.equispaced(6, 2.0)
        s1 = sigma_theta(GAUSS, grid, np.eye(2))
        s2 = sigma_theta(GAUSS, grid, 2.0 * np.eye(2))
        np.testing.assert_allclose(s2, 0.5 * s1, rtol=1e-12)

    def test_dense_grid_approaches_location_fisher(self):
        pts = np.linspace(-4, 4, 81)
        grid = FreqGrid(pts[pts != 0.0])
        s = sigma_theta(GAUSS, grid, np.eye(1))
        assert s[0, 0] == pytest.approx(1.0, rel=0.05)

    def test_rejects_singular_r_p(self):
        with pytest.raises(np.linalg.LinAlgError):
            sigma_theta(GAUSS, FreqGrid([1.0]), np.zeros((1, 1)))


class TestKronWeight:
    def test_identity(self):
        out = kron_weight(np.eye(3), np.eye(2))
        np.testing.assert_array_equal(out, np.eye(6))

    def test_eigenvalues_are_products(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        a = a @ a.conj().T + 3 * np.eye(3)
        b = rng.normal(size=(2, 2))
        b = b @ b.T + 2 * np.eye(2)
        out = kron_weight(a, b)
        got = np.sort(np.linalg.eigvalsh(out))
        want = np.sort(np.outer(np.linalg.eigvalsh(a), np.linalg.eigvalsh(b)).ravel())
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_inverse_factorizes(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(3, 3))
        a = a @ a.T + 3 * np.eye(3)
        b = rng.normal(size=(2, 2))
        b = b @ b.T + 2 * np.eye(2)
        lhs = np.linalg.inv(kron_weight(a, b))
        rhs = np.kron(np.linalg.inv(a), np.linalg.inv(b))
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_rejects_indefinite_factor(self):
        with pytest.raises(np.linalg.LinAlgError):
            kron_weight(-np.eye(2), np.eye(2))


def test_expected_score_vanishes_at_truth():
    grid = FreqGrid.equispaced(7, 2.0)
    np.testing.assert_allclose(expected_score(GAUSS, GAUSS, grid), 0.0, atol=1e-15)
    other = GAUSS.with_free_eta([0.2, 1.1])
    assert np.max(np.abs(expected_score(GAUSS, other, grid))) > 1e-3
