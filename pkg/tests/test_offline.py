"""Off-line oracle tests: batch ECF fit, prediction-error fit, agreement."""

import numpy as np
import pytest

from levyecf import (ArmaParams, FreqGrid, IdentifiabilityError, IidEcfStepper,
                     NoiseModel, TruncationDomain, offline_ecf_iid, offline_pe,
                     run_stepper, sigma_eta, simulate)

GAUSS = NoiseModel("gaussian", [0.3, 1.0])
GAUSS0 = NoiseModel("gaussian", [0.0, 1.0])
GRID = FreqGrid.equispaced(10, 2.0)


class TestOfflineEcf:
    def test_recovers_truth_within_asymptotic_band(self):
        n = 100_000
        data = GAUSS.sample(n, 12).values
        fit = offline_ecf_iid(data, GAUSS.with_free_eta([0.0, 1.3]), GRID)
        assert fit.converged
        band = 3.0 * np.sqrt(np.diag(sigma_eta(GAUSS, GRID)) / n)
        assert np.all(np.abs(fit.estimate - GAUSS.free_eta) < band)

    def test_objective_no_larger_than_at_truth(self):
        data = GAUSS.sample(20_000, 7).values
        fit = offline_ecf_iid(data, GAUSS, GRID)

        def objective(eta_free):
            from levyecf.ecf import c_matrix, weight_solve
            model = GAUSS.with_free_eta(eta_free)
            hbar = (np.exp(1j * np.outer(data, GRID.u)).mean(axis=0)
                    - model.cf(GRID.u))
            return float(np.real(hbar.conj() @ weight_solve(c_matrix(model, GRID), hbar)))

        assert fit.objective <= objective(GAUSS.free_eta) + 1e-12

    def test_objective_monotone_over_accepted_iterations(self):
        vg = NoiseModel("variance_gamma", [1.0, 0.5, -0.1])
        data = vg.sample(50_000, 9).values
        fit = offline_ecf_iid(data, vg.with_free_eta([0.8, 0.3, 0.0]), GRID)
        assert np.all(np.diff(fit.objective_history) <= 1e-15)

    def test_degenerate_grid_raises_identifiability(self):
        data = GAUSS.sample(1000, 3).values
        with pytest.raises(IdentifiabilityError):
            offline_ecf_iid(data, GAUSS, FreqGrid([1.0]))

    def test_too_few_observations(self):
        with pytest.raises(ValueError):
            offline_ecf_iid(GAUSS.sample(5, 1).values, GAUSS, GRID)

    def test_vg_recovery(self):
        vg = NoiseModel("variance_gamma", [1.0, 0.5, -0.1])
        data = vg.sample(200_000, 9).values
        fit = offline_ecf_iid(data, vg.with_free_eta([0.8, 0.3, 0.0]), GRID)
        assert fit.converged
        np.testing.assert_allclose(fit.estimate, vg.free_eta, atol=0.05)


class TestOfflinePe:
    def test_ar1_within_classical_band(self):
        n = 100_000
        a = -0.5
        y = simulate(ArmaParams([a], []), GAUSS0.sample(n, 5).values)
        fit = offline_pe(y, 1, 0)
        assert fit.converged
        # classical AR(1) asymptotics: sqrt(n)(a_hat - a) -> N(0, 1 - a^2)
        band = 3.0 * np.sqrt((1 - a**2) / n)
        assert abs(fit.estimate[0] - a) < band

    def test_impulse_data_exact_recovery(self):
        theta = ArmaParams([-0.6, 0.08], [0.5])
        impulse = np.zeros(300)
        impulse[0] = 1.0
        y = simulate(theta, impulse)
        fit = offline_pe(y, 2, 1)
        np.testing.assert_allclose(fit.estimate, theta.theta, atol=1e-8)

    def test_unstable_initialization_projected_and_converges(self):
        rng = np.random.default_rng(14)
        successes = 0
        for k in range(20):
            y = simulate(ArmaParams([-0.5], []),
                         GAUSS0.sample(30_000, 100 + k).values)
            fit = offline_pe(y, 1, 0, theta0=np.array([-1.0 - rng.uniform(0, 1)]))
            if fit.converged and abs(fit.estimate[0] + 0.5) < 0.05:
                successes += 1
        assert successes >= 18  # 90% of seeds

    def test_degenerate_orders(self):
        fit = offline_pe(np.ones(10), 0, 0)
        assert fit.converged
        assert fit.estimate.size == 0


class TestRecursiveOfflineAgreement:
    def test_alg1_matches_offline_on_identical_data(self):
        n = 20_000
        box = TruncationDomain(eta_low=[-2.0, 0.1], eta_high=[2.0, 4.0])
        data = np.stack([GAUSS.sample(n, 400 + seed).values for seed in range(20)])
        stepper = IidEcfStepper(GAUSS.with_free_eta([0.2, 1.1]), GRID, box)
        trajs = run_stepper(stepper, data, record=False)
        se = np.sqrt(np.diag(sigma_eta(GAUSS, GRID)) / n)
        for k, traj in enumerate(trajs):
            off = offline_ecf_iid(data[k], GAUSS.with_free_eta([0.2, 1.1]), GRID).estimate
            assert np.all(np.abs(traj.final["eta"] - off) < 3.0 * se)
