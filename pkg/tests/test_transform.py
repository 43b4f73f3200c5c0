import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornerspde.dual import dual_function, manufactured_recovery
from cornerspde.noise import CoefficientModel, CovarianceSpec
from cornerspde.she import ModalCoefficients, simulate_path
from cornerspde.transform import (
    CornerPipeline,
    FrequencyField,
    FrequencyGrid,
    convolve_singular,
    expand_half,
    h_transform,
    helmholtz_residual,
    hermite_windowed_modes,
    laplace_of_path,
    phi_from_spectrum,
    raised_cosine,
    resolvent_modes,
    sobolev_time_norm,
    sobolev_time_norm_of_samples,
    support_check,
)

N_STEPS = 256


@pytest.fixture(scope="module")
def pipeline(coarse):
    return CornerPipeline(coarse.basis, coarse.dual, FrequencyGrid.for_path(1.0, N_STEPS))


@pytest.fixture(scope="module")
def additive_path(coarse):
    spec = CovarianceSpec.power_law(coarse.basis.size)
    model = CoefficientModel("additive")
    return simulate_path(coarse.basis, spec, model, None, 1.0, N_STEPS, seed=11), ModalCoefficients(model, coarse.basis)


def test_grid_layout():
    g = FrequencyGrid.for_path(1.0, 64)
    assert g.size == 512 and g.half == 257
    assert g.dxi == pytest.approx(np.pi / 4)
    assert g.xi[1] == pytest.approx(g.dxi)
    assert np.max(np.abs(g.xi)) == pytest.approx(np.pi / g.dt)
    with pytest.raises(ValueError, match="even"):
        FrequencyGrid(0.1, 0.35).size


def test_expand_half_is_conjugate_symmetric(rng):
    n = 16
    x = rng.standard_normal(n)
    full = np.fft.fft(x)
    assert np.allclose(expand_half(full[: n // 2 + 1], n), full)


def test_laplace_transform_of_decaying_mode(coarse):
    # u(t) = e^{-t} in one mode; trapezoid rule versus the closed form
    from cornerspde.she import PathSample

    n = 1024
    t = np.linspace(0, 1, n + 1)
    u = np.zeros((n + 1, 2))
    u[:, 0] = np.exp(-t)
    path = PathSample(t=t, u=u, dW=np.zeros((n, 2)), seed=0, path=0)
    grid = FrequencyGrid.for_path(1.0, n)
    U = laplace_of_path(path, grid)
    z = 1j * grid.xi[:50] + 1.0
    exact = (1 - np.exp(-z)) / z
    # trapezoid error is O((xi dt)^2)
    assert np.allclose(U.values[:50, 0], exact, rtol=0, atol=2e-4 * np.abs(exact).max())
    assert not U.values[:, 1].any()


def test_resolvent_solves_helmholtz_exactly(pipeline, additive_path, coarse):
    path, coeffs = additive_path
    H = h_transform(path, coeffs, pipeline.grid)
    U = resolvent_modes(H, coarse.basis.eigenvalues)
    assert np.max(helmholtz_residual(coarse.basis.eigenvalues, U, H)) < 1e-12


def test_laplace_transform_satisfies_helmholtz_at_low_frequency(pipeline, additive_path, coarse):
    path, coeffs = additive_path
    H = h_transform(path, coeffs, pipeline.grid)
    U = laplace_of_path(path, pipeline.grid)
    res = helmholtz_residual(coarse.basis.eigenvalues, U, H)
    assert np.median(res[np.abs(pipeline.grid.xi) < 20]) < 0.2


def test_transforms_of_real_paths_are_hermitian(pipeline, additive_path):
    path, coeffs = additive_path
    dec = pipeline.decompose(path, coeffs)
    assert dec.H.hermitian_error() < 1e-12
    assert dec.c.hermitian_error() < 1e-12
    assert np.isrealobj(dec.phi)


def test_non_hermitian_spectrum_rejected(pipeline):
    grid = pipeline.grid
    bad = FrequencyField(grid, 1j * np.ones(grid.size))
    with pytest.raises(ValueError, match="Hermitian"):
        phi_from_spectrum(bad)


def test_zero_input_gives_zero_decomposition(coarse, pipeline):
    spec = CovarianceSpec(np.zeros(coarse.basis.size))
    model = CoefficientModel("additive")
    path = simulate_path(coarse.basis, spec, model, None, 1.0, N_STEPS, seed=0)
    dec = pipeline.decompose(path, ModalCoefficients(model, coarse.basis))
    assert not np.any(dec.c.values)
    assert not np.any(dec.phi)
    assert not np.any(dec.regular.l2_norms())
    assert dec.accepted and dec.support_fraction == 0


def test_modal_coefficient_matches_shifted_dual(coarse, pipeline, additive_path):
    # c(z) through the diagonal formula agrees with <H, v0 - z R(z) v0> from a linear solve
    path, coeffs = additive_path
    dec = pipeline.decompose(path, coeffs)
    V = coarse.basis.eigenvectors
    for m in (0, 3, 40):
        z = 1j * pipeline.grid.xi[m]
        h_nodal = V @ dec.H.values[m]
        v = dual_function(coarse.dual, z)
        direct = h_nodal @ v.load
        assert dec.c.values[m] == pytest.approx(direct, rel=1e-8, abs=1e-12)


def test_phi_is_causal_for_additive_path(pipeline, additive_path):
    path, coeffs = additive_path
    dec = pipeline.decompose(path, coeffs)
    assert dec.accepted and dec.support_fraction < 1e-2


def test_regular_part_norms_are_nonnegative_and_finite(pipeline, additive_path):
    path, coeffs = additive_path
    reg = pipeline.decompose(path, coeffs).regular
    for norms in (reg.l2_norms(), reg.laplacian_norms()):
        assert np.all(np.isfinite(norms)) and np.all(norms >= 0)


def test_manufactured_coefficient_near_one(coarse):
    for z in (0.0, 1.0, 1 + 5j):
        res = manufactured_recovery(coarse.dual, z)
        assert abs(res.coefficient - 1) < 0.02
        assert res.regular_l2 < 0.05 * res.solution_l2


def test_decomposition_reproduces_path_on_test_functions(pipeline, additive_path):
    path, coeffs = additive_path
    dec = pipeline.decompose(path, coeffs)
    tests = hermite_windowed_modes(dec.t, 1.0, 3)
    assert pipeline.decomposition_residual(path, dec, tests, n_space=6) < 0.05


def test_raised_cosine_shape():
    xi = np.array([0.0, 80.0, 90.0, 95.0, 100.0])
    w = raised_cosine(xi, 100.0, 0.1)
    assert np.allclose(w, [1, 1, 1, 0.5, 0])
    assert np.all(raised_cosine(xi, 100.0, 0.0) == 1)


def test_sobolev_norm_of_gaussian():
    # f = exp(-t^2/2): f_hat = sqrt(2 pi) exp(-xi^2/2), so int |f_hat|^2 = 2 pi^(3/2)
    dt = 0.01
    t = np.arange(-20, 20, dt)
    f = np.exp(-(t**2) / 2)
    value = sobolev_time_norm_of_samples(np.fft.ifftshift(f), dt, 0.0)
    assert value**2 == pytest.approx(2 * np.pi**1.5, rel=1e-8)
    # s = 1 adds int xi^2 |f_hat|^2 = pi^(3/2)
    value1 = sobolev_time_norm_of_samples(np.fft.ifftshift(f), dt, 1.0)
    assert value1**2 == pytest.approx(3 * np.pi**1.5, rel=1e-6)


@given(st.floats(-2.0, 2.0), st.floats(0.1, 3.0))
@settings(max_examples=25, deadline=None)
def test_sobolev_norm_is_monotone_in_order(s, scale):
    xi = np.linspace(-50, 50, 401)
    spec = np.exp(-(xi / (10 * scale)) ** 2)
    assert sobolev_time_norm(spec, xi, 0.25, s) <= sobolev_time_norm(spec, xi, 0.25, s + 0.1) + 1e-12


def test_support_check_counts_left_tail():
    t = np.linspace(-1, 1, 201)
    phi = np.where(t < -0.5, 1.0, 0.0) + np.where(t > 0, 3.0, 0.0)
    frac, ok = support_check(t, phi, 0.1, 1e-2)
    assert frac == pytest.approx(50 / (50 + 9 * 100)) and not ok
    assert support_check(t, np.zeros_like(t), 0.1) == (0.0, True)


def test_convolution_with_unit_impulse():
    dt = 0.01
    t = dt * np.arange(100)
    phi = np.zeros(100)
    phi[0] = 1.0 / dt
    g = np.sin(t)
    test = np.ones(100)
    assert convolve_singular(t, phi, g, test) == pytest.approx(np.sum(g) * dt, rel=1e-12)
    with pytest.raises(ValueError):
        convolve_singular(t, phi, g, test[:-1])


def test_grid_mismatch_rejected(pipeline, additive_path):
    path, coeffs = additive_path
    with pytest.raises(ValueError, match="time step"):
        h_transform(path, coeffs, FrequencyGrid.for_path(1.0, 2 * N_STEPS))


def test_support_check_on_one_sided_and_symmetric_signals():
    t = np.linspace(-2, 2, 4001)
    causal = np.where(t >= 0, np.exp(-3 * t), 0.0)
    frac, ok = support_check(t, causal, 0.01)
    assert frac == 0.0 and ok
    symmetric = np.exp(-3 * np.abs(t))
    frac, ok = support_check(t, symmetric, 0.0)
    assert frac == pytest.approx(0.5, abs=0.01) and not ok
