import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornerspde.noise import (
    CoefficientModel,
    CovarianceSpec,
    apply_F,
    apply_G,
    hilbert_schmidt_norm,
    sample_increments,
    standard_normal_row,
)
from cornerspde.she import (
    ModalCoefficients,
    integrate,
    path_statistics,
    read_trajectory,
    simulate_path,
    simulate_paths,
    time_grid,
    write_trajectory,
)


def test_zero_covariance_gives_zero_increments():
    dW = sample_increments(CovarianceSpec(np.zeros(5)), time_grid(1.0, 16), seed=3)
    assert dW.shape == (16, 5) and not dW.any()


def test_increment_variance_matches_covariance():
    spec = CovarianceSpec(np.array([1.0, 0.25, 0.04]))
    t = np.linspace(0, 1.0, 100001)
    dW = sample_increments(spec, t, seed=99)
    var = np.var(dW / np.sqrt(np.diff(t))[:, None], axis=0)
    assert np.allclose(var / spec.q, 1.0, atol=0.05)


def test_increments_are_reproducible_and_row_addressable():
    spec = CovarianceSpec.power_law(8)
    t = time_grid(1.0, 32)
    a = sample_increments(spec, t, seed=5, path=2)
    b = sample_increments(spec, t, seed=5, path=2)
    assert a.tobytes() == b.tobytes()
    row = standard_normal_row(5, 2, 17, 8) * np.sqrt(spec.q * (t[1] - t[0]))
    assert np.allclose(a[17], row, rtol=1e-14, atol=0)
    assert not np.array_equal(a, sample_increments(spec, t, seed=5, path=3))


def test_nonincreasing_time_grid_rejected():
    with pytest.raises(ValueError):
        sample_increments(CovarianceSpec(np.ones(2)), [0.0, 0.1, 0.1], seed=1)


def test_invalid_covariances_rejected():
    with pytest.raises(ValueError):
        CovarianceSpec(np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        CovarianceSpec(np.array([]))


def test_unknown_variant_rejected():
    with pytest.raises(ValueError, match="unknown"):
        CoefficientModel("multiplicative")


def test_additive_diffusion_ignores_the_state(coarse, rng):
    model = CoefficientModel("additive")
    w = rng.standard_normal(10)
    u1, u2 = rng.standard_normal((2, coarse.system.n_dofs))
    assert np.array_equal(apply_G(model, u1, w, basis=coarse.basis), apply_G(model, u2, w, basis=coarse.basis))


def test_identity_drift(coarse, rng):
    model = CoefficientModel("additive", f=lambda x, u: u)
    u = rng.standard_normal(coarse.system.n_dofs)
    assert np.array_equal(apply_F(model, u, coarse.basis.points), u)


def _example2_model(problem, threshold):
    x, y = problem.basis.points.T
    u0 = np.sin(np.pi * x) * np.sin(np.pi * y)
    return CoefficientModel("example2", u0_field=u0, v0_field=problem.dual.nodal, v0_load=problem.dual.load, threshold=threshold), u0


def test_example2_channel_is_off_below_threshold(coarse):
    model, u0 = _example2_model(coarse, threshold=10.0)
    out = apply_G(model, 0.5 * u0, 0.3, basis=coarse.basis)
    assert np.array_equal(out, 0.3 * u0)
    on, _ = _example2_model(coarse, threshold=0.0)
    assert not np.allclose(apply_G(on, 0.5 * u0, 0.3, basis=coarse.basis), 0.3 * u0)


def test_hilbert_schmidt_norm_of_additive_noise():
    spec = CovarianceSpec.power_law(20)
    assert hilbert_schmidt_norm(CoefficientModel("additive"), spec) ** 2 == pytest.approx(spec.trace)


def test_nemytskii_hs_norm_with_constant_multiplier(coarse):
    spec = CovarianceSpec.power_law(10)
    model = CoefficientModel("nemytskii_smooth", g=lambda x, u: 2.0 + 0 * u)
    hs = hilbert_schmidt_norm(model, spec, np.zeros(coarse.basis.size), coarse.basis)
    assert hs**2 == pytest.approx(4 * spec.trace, rel=1e-10)


def test_deterministic_decay_is_exact(coarse):
    model = CoefficientModel("additive")
    spec = CovarianceSpec(np.zeros(coarse.basis.size))
    k = 3
    u0 = coarse.basis.eigenvectors[:, k]
    p = simulate_path(coarse.basis, spec, model, u0, 1.0, 64, seed=0)
    expected = np.exp(-coarse.basis.eigenvalues[k] * p.t)
    assert np.allclose(p.u[:, k], expected, rtol=1e-10, atol=1e-14)
    others = np.delete(p.u, k, axis=1)
    assert np.max(np.abs(others)) < 1e-10


def test_linear_drift_converges_first_order(coarse):
    model = CoefficientModel("additive", f=lambda x, u: -u)
    spec = CovarianceSpec(np.zeros(coarse.basis.size))
    k = 0
    lam = coarse.basis.eigenvalues[k]
    u0 = coarse.basis.eigenvectors[:, k]
    errs = []
    for n in (32, 64, 128):
        p = simulate_path(coarse.basis, spec, model, u0, 1.0, n, seed=0)
        errs.append(np.max(np.abs(p.u[:, k] - np.exp(-(lam + 1) * p.t))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 1.0) < 0.1)


def test_ou_variance_of_the_modes(coarse):
    # exact variance of the exponential Euler recursion, and its continuous limit
    spec = CovarianceSpec(np.array([1.0, 0.5, 0.2]))
    model = CoefficientModel("additive")
    n_steps, n_paths = 64, 10000
    t = time_grid(1.0, n_steps)
    dW = np.stack([sample_increments(spec, t, 17, p) for p in range(n_paths)])
    dW_full = np.zeros((n_paths, n_steps, coarse.basis.size))
    dW_full[..., :3] = dW
    final = integrate(coarse.basis, model, np.zeros(coarse.basis.size), t, dW_full, store=False, observer=None)
    assert final is None
    states = integrate(coarse.basis, model, np.zeros(coarse.basis.size), t, dW_full)
    lam = coarse.basis.eigenvalues[:3]
    dt = 1.0 / n_steps
    tn = t[:-1]
    discrete = spec.q * dt * np.exp(-2 * lam[None, :] * (1.0 - tn[:, None])).sum(axis=0)
    var = states[:, -1, :3].var(axis=0, ddof=1)
    se = discrete * np.sqrt(2 / (n_paths - 1))
    assert np.all(np.abs(var - discrete) < 4 * se)
    continuous = spec.q * -np.expm1(-2 * lam) / (2 * lam)
    fine_dt = 1.0 / 2**16
    tf = np.arange(0, 1, fine_dt)
    fine = spec.q * fine_dt * np.exp(-2 * lam[None, :] * (1.0 - tf[:, None])).sum(axis=0)
    assert np.allclose(fine, continuous, rtol=1e-3)


def test_non_finite_state_reports_the_step(coarse):
    model = CoefficientModel("additive")
    t = time_grid(1.0, 8)
    dW = np.zeros((1, 8, coarse.basis.size))
    dW[0, 5, 0] = np.inf
    with pytest.raises(FloatingPointError, match="step 6"):
        integrate(coarse.basis, model, np.zeros(coarse.basis.size), t, dW)


def test_path_statistics_of_zero_run(coarse):
    spec = CovarianceSpec(np.zeros(5))
    paths = simulate_paths(coarse.basis, spec, CoefficientModel("additive"), None, 1.0, 16, seed=1, n_paths=3)
    stats = path_statistics(paths)
    assert stats["sup_mean_square"][0] == 0 and stats["final_mean_square"][0] == 0
    with pytest.raises(ValueError):
        path_statistics([])


def test_path_statistics_ignore_ordering(coarse):
    spec = CovarianceSpec.power_law(10)
    paths = simulate_paths(coarse.basis, spec, CoefficientModel("additive"), None, 1.0, 32, seed=4, n_paths=6)
    a = path_statistics(paths)
    b = path_statistics(paths[::-1])
    assert a["sup_mean_square"][0] == pytest.approx(b["sup_mean_square"][0], rel=1e-14)
    assert a["final_mean_square"][0] == pytest.approx(b["final_mean_square"][0], rel=1e-14)


def test_sup_mean_square_is_stable_under_step_doubling(coarse):
    spec = CovarianceSpec.power_law(coarse.basis.size)
    model = CoefficientModel("additive")
    sups = [
        path_statistics(simulate_paths(coarse.basis, spec, model, None, 1.0, n, seed=8, n_paths=200))["sup_mean_square"][0]
        for n in (128, 256)
    ]
    assert abs(sups[1] / sups[0] - 1) < 0.10


def test_identical_seeds_give_identical_bytes(coarse):
    spec = CovarianceSpec.power_law(coarse.basis.size)
    model = CoefficientModel("additive")
    a = simulate_path(coarse.basis, spec, model, None, 1.0, 64, seed=21, path=3)
    b = simulate_path(coarse.basis, spec, model, None, 1.0, 64, seed=21, path=3)
    assert a.u.tobytes() == b.u.tobytes() and a.dW.tobytes() == b.dW.tobytes()


def test_batched_paths_equal_single_paths(coarse):
    spec = CovarianceSpec.power_law(coarse.basis.size)
    model = CoefficientModel("additive")
    batch = simulate_paths(coarse.basis, spec, model, None, 1.0, 32, seed=2, n_paths=3, first_path=5)
    single = simulate_path(coarse.basis, spec, model, None, 1.0, 32, seed=2, path=6)
    assert np.array_equal(batch[1].u, single.u)


def test_trajectory_roundtrip(tmp_path, coarse):
    spec = CovarianceSpec.power_law(coarse.basis.size)
    p = simulate_path(coarse.basis, spec, CoefficientModel("additive"), None, 1.0, 32, seed=9, path=4)
    write_trajectory(p, tmp_path / "p.bin")
    back = read_trajectory(tmp_path / "p.bin", T=1.0, path_id=4)
    assert np.array_equal(back.u, p.u) and np.array_equal(back.dW, p.dW)
    assert back.seed == 9
    raw = (tmp_path / "p.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_trajectory(tmp_path / "bad.bin")


def test_example2_single_channel_padding_roundtrip(tmp_path, coarse):
    model, u0 = _example2_model(coarse, threshold=0.9)
    spec = CovarianceSpec(np.array([1.0]))
    p = simulate_path(coarse.basis, spec, model, u0, 1.0, 32, seed=1)
    write_trajectory(p, tmp_path / "e.bin")
    back = read_trajectory(tmp_path / "e.bin")
    assert np.array_equal(back.dW[:, 0], p.dW[:, 0]) and not back.dW[:, 1:].any()


def test_noise_channel_mismatch_rejected(coarse):
    model, u0 = _example2_model(coarse, threshold=1.0)
    with pytest.raises(ValueError, match="noise channels"):
        simulate_path(coarse.basis, CovarianceSpec(np.ones(2)), model, u0, 1.0, 8, seed=0)


@given(st.integers(0, 2**63), st.integers(0, 1000), st.integers(0, 5000))
@settings(max_examples=30, deadline=None)
def test_rows_depend_only_on_their_counter(seed, path, step):
    a = standard_normal_row(seed, path, step, 4)
    b = standard_normal_row(seed, path, step, 4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, standard_normal_row(seed, path, step + 1, 4))


def test_modal_diffusion_matches_nodal_for_nemytskii(coarse, rng):
    spec = CovarianceSpec.power_law(10)
    model = CoefficientModel("nemytskii_smooth", g=lambda x, u: 1.0 + 0.5 * np.cos(u))
    coeffs = ModalCoefficients(model, coarse.basis)
    U = rng.standard_normal((1, coarse.basis.size)) * 0.1
    w = rng.standard_normal(spec.m)
    nodal_u = coarse.basis.synthesize(U)[0]
    nodal = apply_G(model, nodal_u, w, coarse.basis.points, coarse.basis)
    modal = coeffs.diffusion(U, w[None, :])
    assert np.allclose(modal[0], coarse.basis.project(nodal), atol=1e-12)
