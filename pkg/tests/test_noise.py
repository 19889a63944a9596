"""Noise family tests: closed forms, gradient oracles, sampler laws."""

import numpy as np
import pytest

from levyecf import NoiseDomainError, NoiseModel

GAUSS = NoiseModel("gaussian", [0.0, 1.0])
VG = NoiseModel("variance_gamma", [1.0, 0.5, 0.0])
VG4 = NoiseModel("variance_gamma", [0.8, 0.6, -0.2, 0.1])
NIG = NoiseModel("normal_inverse_gaussian", [2.0, 0.5, 1.0, 0.1])
ALL_MODELS = [GAUSS, NoiseModel("gaussian", [0.3, 0.7]), VG, VG4, NIG,
              NoiseModel("variance_gamma", [1.2, 0.7, -0.2], h=0.5),
              NoiseModel("normal_inverse_gaussian", [3.0, -1.0, 0.5, 0.0], h=2.0)]


def test_cf_at_zero_is_one_exactly():
    for model in ALL_MODELS:
        assert model.cf(0.0) == 1.0 + 0.0j


def test_gaussian_cf_closed_form():
    assert GAUSS.cf(1.0) == pytest.approx(np.exp(-0.5), abs=1e-15)


def test_vg_cf_closed_form():
    # (1 + sigma^2*nu/2)^(-h/nu) at u=1: (1.25)^-2 = 0.64
    assert VG.cf(1.0) == pytest.approx(0.64, abs=1e-14)


def test_gaussian_cf_empirical_cross_check():
    y = GAUSS.sample(10**6, 123).values
    emp = np.mean(np.exp(1j * y))
    assert abs(emp - GAUSS.cf(1.0)) < 3e-3


def test_vg_cf_empirical_cross_check():
    y = VG.sample(10**6, 321).values
    emp = np.mean(np.exp(1j * y))
    assert abs(emp - VG.cf(1.0)) < 5e-3


def test_h_scaling_is_exponent_linear():
    for model in (GAUSS, VG4, NIG):
        half = NoiseModel(model.family, model.eta, h=0.5)
        u = np.linspace(-3, 3, 11)
        np.testing.assert_allclose(half.log_cf(u) * 2.0, model.log_cf(u), atol=1e-13)


def test_gaussian_grad_mu_closed_form():
    grad = GAUSS.cf_grad(1.0)
    assert grad[0] == pytest.approx(1j * np.exp(-0.5), abs=1e-12)


def test_grad_vanishes_at_zero():
    for model in ALL_MODELS:
        np.testing.assert_allclose(model.cf_grad(0.0), 0.0, atol=1e-14)


def _fd_grad(model, u, step=1e-6):
    cols = []
    for j in range(model.p_eta):
        eta = model.free_eta
        up = eta.copy()
        dn = eta.copy()
        up[j] += step
        dn[j] -= step
        cols.append((model.with_free_eta(up).cf(u) - model.with_free_eta(dn).cf(u))
                    / (2 * step))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("model", ALL_MODELS)
def test_grad_matches_finite_differences(model):
    rng = np.random.default_rng(99)
    u = rng.uniform(-3, 3, size=100)
    u = u[u != 0]
    got = model.cf_grad(u)
    want = _fd_grad(model, u)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)


def test_hermitian_symmetry_random_models():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 1000:
        family = rng.choice(["gaussian", "variance_gamma", "normal_inverse_gaussian"])
        if family == "gaussian":
            eta = [rng.normal(), rng.uniform(0.2, 3)]
        elif family == "variance_gamma":
            eta = [rng.uniform(0.2, 2), rng.uniform(0.1, 2), rng.normal()]
        else:
            beta = rng.uniform(-1, 1)
            eta = [abs(beta) + rng.uniform(0.5, 3), beta, rng.uniform(0.2, 2), rng.normal()]
        model = NoiseModel(family, eta)
        u = rng.uniform(0.01, 5)
        assert model.cf(-u) == pytest.approx(np.conj(model.cf(u)), abs=1e-13)
        assert abs(model.cf(u)) <= 1.0 + 1e-12
        checked += 1


@pytest.mark.parametrize("model", ALL_MODELS)
def test_cf_modulus_bounded(model):
    u = np.linspace(-10, 10, 201)
    assert np.all(np.abs(model.cf(u)) <= 1.0 + 1e-12)


def test_gaussian_sampler_moments():
    s = GAUSS.sample(10**6, 77)
    assert abs(np.mean(s.values)) < 4e-3
    assert abs(np.var(s.values) - 1.0) < 1e-2


@pytest.mark.parametrize("model", [GAUSS, VG, VG4, NIG])
def test_empirical_cf_matches_cf_on_grid(model):
    y = model.sample(10**6, 2024).values
    u = np.linspace(-2, 2, 21)
    emp = np.mean(np.exp(1j * np.outer(y, u)), axis=0)
    assert np.max(np.abs(emp - model.cf(u))) < 5e-3


def test_sampling_determinism():
    for model in (GAUSS, VG, NIG):
        a = model.sample(1000, 5).values
        b = model.sample(1000, 5).values
        np.testing.assert_array_equal(a, b)


def test_sampler_respects_h():
    model = NoiseModel("gaussian", [0.5, 1.0], h=0.25)
    s = model.sample(200_000, 11).values
    assert np.mean(s) == pytest.approx(0.125, abs=5e-3)
    assert np.var(s) == pytest.approx(0.25, rel=2e-2)


def test_domain_errors():
    with pytest.raises(NoiseDomainError):
        NoiseModel("gaussian", [0.0, -1.0])
    with pytest.raises(NoiseDomainError):
        NoiseModel("variance_gamma", [1.0, -0.5, 0.0])
    with pytest.raises(NoiseDomainError):
        NoiseModel("normal_inverse_gaussian", [1.0, 2.0, 1.0, 0.0])  # alpha <= |beta|
    with pytest.raises(NoiseDomainError):
        NoiseModel("cauchy", [0.0, 1.0])


def test_free_parameter_masking():
    model = NoiseModel("gaussian", [0.3, 1.0], free=(0,))
    assert model.p_eta == 1
    np.testing.assert_array_equal(model.free_eta, [0.3])
    grad = model.cf_grad(np.array([1.0, 2.0]))
    assert grad.shape == (2, 1)
    shifted = model.with_free_eta([0.7])
    np.testing.assert_array_equal(shifted.eta, [0.7, 1.0])
    assert model.eta[0] == 0.3  # original untouched


def test_vg_four_parameter_drift():
    base = NoiseModel("variance_gamma", [0.8, 0.6, -0.2, 0.0])
    drifted = NoiseModel("variance_gamma", [0.8, 0.6, -0.2, 0.4])
    u = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(drifted.cf(u), base.cf(u) * np.exp(1j * u * 0.4),
                               atol=1e-14)
    s = drifted.sample(400_000, 3).values
    assert np.mean(s) == pytest.approx(-0.2 + 0.4, abs=6e-3)
