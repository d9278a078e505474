import numpy as np
import pytest
from scipy import integrate

from polaron.dynamics import CoupledSystem
from polaron.memory_kernel import (
    SphericalQuadrature,
    check_invertibility,
    compute_K,
    compute_M,
    compute_r0,
    fit_kernel_decay,
    fourier_M,
    oscillatory_integral,
    solve_volterra,
    volterra_resolvent,
    dispersive_decay,
)
from polaron.potentials import PotentialSpec
from polaron.spectral import FourierGrid3, physical_field
from conftest import smooth_random_field

V0 = (0.0, 0.0, 0.5)


def m33_by_nested_quad(t, v=0.5, amplitude=1.0, width=1.0):
    """M_33(t) in spherical coordinates about v, integrated with adaptive scipy quadrature."""
    def inner(r):
        h = lambda c: r * np.sqrt(1 + r * r) - v * r * c
        f = lambda c: c * c * np.sin(t * h(c)) / h(c) ** 2
        return integrate.quad(f, -1, 1, epsabs=1e-14, epsrel=1e-12, limit=200)[0]

    w2 = lambda r: (amplitude * width**3 * np.exp(-0.5 * (width * r) ** 2)) ** 2
    g = lambda r: 2 * np.pi * r**5 / np.sqrt(1 + r * r) * w2(r) * inner(r)
    return integrate.quad(g, 0, 9, epsabs=1e-13, epsrel=1e-11, limit=400)[0]


@pytest.fixture(scope="module")
def kernel():
    return compute_M(V0, PotentialSpec.gaussian(1.0, 1.0), 0.05, 1200)


def test_quadrature_integrates_gaussian_moments():
    assert SphericalQuadrature(panel=0.25).validate()["pass"]
    tilted = SphericalQuadrature(panel=0.25, n_polar=24).aligned((1.0, -2.0, 0.5))
    assert tilted.validate()["pass"]


def test_quadrature_rejects_bad_parameters():
    with pytest.raises(ValueError):
        SphericalQuadrature(r_max=-1.0)
    with pytest.raises(ValueError):
        SphericalQuadrature(n_azimuth=2)


@pytest.mark.parametrize("t", [2.0, 10.0])
def test_longitudinal_kernel_against_nested_quadrature(kernel, t):
    k = int(round(t / kernel.dt))
    assert kernel.samples[k, 2, 2] == pytest.approx(m33_by_nested_quad(t), abs=1e-6 * kernel.scale)


def test_kernel_vanishes_at_zero_and_starts_with_its_slope(kernel):
    assert np.all(kernel.samples[0] == 0.0)
    fd = kernel.samples[1] / kernel.dt
    assert np.allclose(fd, kernel.slope0, rtol=1e-2, atol=1e-12)


def test_kernel_is_diagonal_in_the_velocity_frame(kernel):
    assert kernel.off_diagonal_ratio() < 1e-10
    assert kernel.asymmetry() < 1e-12
    assert np.allclose(kernel.samples[:, 0, 0], kernel.samples[:, 1, 1], rtol=0, atol=1e-12 * kernel.scale)


def test_kernel_is_rotation_covariant():
    spec = PotentialSpec.gaussian(1.0, 1.0)
    a = compute_M(V0, spec, 0.1, 30)
    v = np.array([0.3, 0.0, 0.4])
    b = compute_M(v, spec, 0.1, 30)
    # rotation taking e3 to v/|v| in the x1-x3 plane
    c, s = 0.8, 0.6
    R = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    assert np.allclose(R @ a.samples @ R.T, b.samples, atol=1e-10 * a.scale)


def test_kernel_rejects_sonic_velocity():
    with pytest.raises(ValueError):
        compute_M((0.0, 0.0, 1.0), PotentialSpec.gaussian(), 0.1, 10)


def test_fourier_paths_agree_and_improve_with_smaller_step(kernel):
    coarse = compute_M(V0, kernel.spec, 0.1, 600)
    for w in (0.1, 1.0, 5.0):
        assert fourier_M(kernel, w).discrepancy < 1e-3
        # the plain trapezoid error is second order in the step
        fine_s = fourier_M(kernel, w, endpoint_correction=False)
        coarse_s = fourier_M(coarse, w, endpoint_correction=False)
        assert fine_s.discrepancy <= 0.5 * coarse_s.discrepancy


def test_fourier_transform_rejects_upper_half_plane(kernel):
    with pytest.raises(ValueError):
        fourier_M(kernel, 1.0, y=-0.1)


def test_invertibility_certificates(kernel):
    rep = check_invertibility(kernel, [-5.0, -1.0, 0.0, 1.0, 5.0])
    assert rep.all_pass
    assert rep.min_abs_det > 0.1
    by_omega = {r["omega"]: r for r in rep.records}
    assert all(e < 0 for e in by_omega[1.0]["imaginary_eigenvalues"])
    assert all(e > 0 for e in by_omega[-1.0]["imaginary_eigenvalues"])


def test_resolvent_is_causal_and_matches_direct_solve(kernel):
    K = compute_K(kernel)
    assert K.causality_residual < 1e-8
    assert K.cross_check < 1e-6


def test_volterra_against_closed_form():
    # M(t) = a t: x'' = -a x, so x = cos(sqrt(a) t) for r = 1, and K = -sqrt(a) sin(sqrt(a) t)
    a, dt, n = 2.0, 0.005, 1201
    t = dt * np.arange(n)
    M = a * t[:, None, None] * np.eye(3)[None]
    r = np.ones((n, 3))
    sol = solve_volterra(M, r, dt=dt)
    assert np.max(np.abs(sol.direct[:, 0] - np.cos(np.sqrt(a) * t))) < 1e-4
    K = volterra_resolvent(M, dt)
    assert np.max(np.abs(K[:, 1, 1] + np.sqrt(a) * np.sin(np.sqrt(a) * t))) < 1e-4
    assert np.max(np.abs(K[:, 0, 1])) == 0.0


def test_volterra_resolvent_form_matches_direct(kernel):
    K = compute_K(kernel)
    t = kernel.times
    r = np.column_stack([np.exp(-t), np.sin(t) * np.exp(-0.2 * t), 1.0 / (1.0 + t) ** 2])
    sol = solve_volterra(kernel, r, K=K)
    assert sol.discrepancy < 1e-4


def test_volterra_needs_a_long_enough_kernel(kernel):
    with pytest.raises(ValueError):
        solve_volterra(kernel.samples[:5], np.zeros((10, 3)), dt=kernel.dt)


def test_decay_fit_ignores_noise_floor():
    t = np.linspace(0, 40, 401)
    values = np.where(t < 20, (1 + t) ** -4.0, 1e-17)
    fit = fit_kernel_decay(t, values, (5, 40))
    assert fit.exponent == pytest.approx(-4.0, abs=1e-9)


def test_free_source_at_time_zero_against_physical_quadrature(rng):
    g = FourierGrid3(64, 16.0)
    model = CoupledSystem(g, PotentialSpec.gaussian(0.8, 1.0))
    X = np.array([0.25, -0.1, 0.4])
    D0 = physical_field(g, smooth_random_field(g, rng, scale=0.1))
    x = [((xa - Xa + g.L / 2) % g.L) - g.L / 2 for xa, Xa in zip(g.axes(g.coordinates), X)]
    w = 0.8 * np.exp(-0.5 * (x[0] ** 2 + x[1] ** 2 + x[2] ** 2))
    d = D0.spectral()
    re_hat = 0.5 * (d + np.conj(g.mirror(d)))
    u_re = np.fft.ifftn(model.u * re_hat).real / g.cell_volume
    oracle = np.array([np.sum(-xa * w * u_re) for xa in x]) * g.cell_volume
    assert np.allclose(compute_r0(0.0, D0, model, X), oracle, rtol=1e-6, atol=1e-12)


def test_free_source_follows_the_propagator_group(model32, rng):
    g = model32.grid
    D0 = physical_field(g, smooth_random_field(g, rng, scale=0.1))
    from polaron.spectral import spectral_field
    D1 = spectral_field(g, np.exp(-0.7j * model32.h) * D0.spectral())
    X = np.array([0.1, 0.2, 0.3])
    assert np.allclose(compute_r0(1.2, D0, model32, X), compute_r0(0.5, D1, model32, X), atol=1e-14)


def test_oscillatory_integral_against_radial_quadrature():
    f = PotentialSpec.gaussian(1.0, 1.0)
    t = 5.0
    got = oscillatory_integral(0, None, (0.0, 0.0, 0.0), f, f, [t])[0]
    dens = lambda r: 4 * np.pi * r**2 * (np.exp(-0.5 * r * r)) ** 2
    ph = lambda r: t * r * np.sqrt(1 + r * r)
    re = integrate.quad(lambda r: dens(r) * np.cos(ph(r)), 0, 10, limit=400, epsabs=1e-13)[0]
    im = -integrate.quad(lambda r: dens(r) * np.sin(ph(r)), 0, 10, limit=400, epsabs=1e-13)[0]
    assert got == pytest.approx(complex(re, im), abs=1e-9)


def test_dispersive_series_is_unitary_and_bounded_in_band():
    from polaron.potentials import eval_W
    g = FourierGrid3(64, 64.0)
    f = eval_W(PotentialSpec.gaussian(1.0, 1.0), g)
    series = dispersive_decay(f, 0, 0.0, np.linspace(1.0, 12.0, 12))
    assert series.extra["l2_drift"] < 1e-12
    assert series.extra["band_ratio"] <= 2.0
    with pytest.raises(ValueError):
        dispersive_decay(f, 0, 0.0, [1e3])
    with pytest.raises(ValueError):
        dispersive_decay(f, 0, 1.5, [1.0])


def test_history_terms_are_quadratic_in_the_perturbation(model32):
    from polaron.dynamics import PerturbationSpec
    from polaron.memory_kernel import history_scaling

    rep = history_scaling(model32, (0.0, 0.0, 0.4), PerturbationSpec(0.01, 1.0), 2.0, 0.05, [1.0, 2.0])
    assert rep["pass"], rep
    assert np.allclose(rep["r1_ratio"] + rep["r2_ratio"], 4.0, rtol=0.05)
