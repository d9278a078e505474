import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polaron.potentials import PotentialSpec, potential_hat
from polaron.spectral import FourierGrid3, spectral_field
from polaron.traveling_wave import (
    Regime,
    WaveProfile,
    check_uniform_bounds,
    cube_rotations,
    force_on_particle,
    h_v_grid,
    regime_of,
    residual,
    rotate_samples,
    rotation_covariance,
    solve_profile,
    supersonic_real_part_norm,
    supersonic_scan,
)
from conftest import smooth_random_field


@pytest.fixture(scope="module")
def fine_grid():
    # spacing 1/4 resolves the unit Gaussian to rounding, so physical-space sums are exact oracles
    return FourierGrid3(64, 16.0)


def grad_gaussian(grid, X, width=1.0, amp=1.0):
    x = [((xa - Xa + grid.L / 2) % grid.L) - grid.L / 2 for xa, Xa in zip(grid.axes(grid.coordinates), X)]
    w = amp * np.exp(-0.5 * (x[0] ** 2 + x[1] ** 2 + x[2] ** 2) / width**2)
    return [-xa / width**2 * w for xa in x]


def test_profile_at_rest_is_real_screened_kernel(grid32, gauss):
    prof = solve_profile((0, 0, 0), gauss, grid32)
    expected = -potential_hat(gauss, grid32) / (1 + grid32.xi_norm**2)
    expected[0, 0, 0] = 0.0  # the zero mode is gauged away
    assert np.max(np.abs(prof.gamma.data - expected)) < 1e-12
    assert np.max(np.abs(prof.gamma.physical().imag)) < 1e-10


@pytest.mark.parametrize("v", [(0, 0, 0.5), (0.3, -0.2, 0.4), (0, 0, 1.0)])
def test_spectral_identity_at_every_node(grid32, gauss, v):
    prof = solve_profile(v, gauss, grid32)
    hv = h_v_grid(grid32, v)
    w = potential_hat(gauss, grid32)
    lhs = hv * prof.G.data
    mask = grid32.xi_norm > 0
    assert np.max(np.abs(lhs[mask] + w[mask])) <= 1e-10 * np.max(np.abs(w))


@pytest.mark.parametrize("v", [(0, 0, 0.5), (0.6, 0.0, 0.0), (0, 0, 1.0)])
def test_profile_equation_residual(grid32, gauss, v):
    assert residual(solve_profile(v, gauss, grid32), gauss) < 1e-8


def test_residual_grows_linearly_with_noise(grid32, gauss, rng):
    prof = solve_profile((0, 0, 0.5), gauss, grid32)
    noise = np.fft.fftn(smooth_random_field(grid32, rng)) * grid32.cell_volume
    res = []
    for eps in (1e-3, 2e-3, 4e-3):
        bent = WaveProfile(prof.velocity, spectral_field(grid32, prof.G.data + eps * noise), prof.regime)
        res.append(residual(bent, gauss))
    assert res[1] / res[0] == pytest.approx(2.0, rel=1e-4)
    assert res[2] / res[1] == pytest.approx(2.0, rel=1e-4)


def test_force_pairing_against_physical_quadrature(fine_grid, gauss, rng):
    beta = spectral_field(fine_grid, np.fft.fftn(smooth_random_field(fine_grid, rng)) * fine_grid.cell_volume)
    X = np.array([0.37, -1.21, 0.8])
    grad = grad_gaussian(fine_grid, X)
    re = beta.physical().real
    oracle = np.array([np.sum(gj * re) for gj in grad]) * fine_grid.cell_volume
    assert np.allclose(force_on_particle(beta, gauss, X), oracle, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("v", [(0, 0, 0.5), (0.2, 0.3, -0.4)])
def test_zero_force_on_own_wave(fine_grid, gauss, v):
    prof = solve_profile(v, gauss, fine_grid)
    f = force_on_particle(prof.gamma, gauss, np.zeros(3))
    w_l2 = np.sqrt(np.sum(np.abs(potential_hat(gauss, fine_grid)) ** 2) / fine_grid.L**3)
    assert np.linalg.norm(f) < 1e-8 * w_l2**2


def test_regimes():
    assert regime_of((0, 0, 0.3)) is Regime.SUBSONIC
    assert regime_of((0, 0.6, 0.8)) is Regime.SONIC
    assert regime_of((0, 0, 1.01)) is Regime.SUPERSONIC
    with pytest.raises(ValueError):
        solve_profile((0, 0, 1.5), PotentialSpec.gaussian(), FourierGrid3(16, 8.0))


def test_cube_group():
    rots = cube_rotations()
    assert len(rots) == 24
    assert all(np.allclose(R @ R.T, np.eye(3)) and np.isclose(np.linalg.det(R), 1) for R in rots)


def test_rotate_samples_matches_coordinates(grid32):
    x1, x2, x3 = grid32.axes(grid32.coordinates)
    f = (x1 + 2 * x2 + 3 * x3) * np.ones(grid32.shape)
    R = np.array([[0, 0, 1.0], [-1.0, 0, 0], [0, -1.0, 0]])
    g = rotate_samples(f, R)
    Rx = [R[a, 0] * x1 + R[a, 1] * x2 + R[a, 2] * x3 for a in range(3)]
    expected = (Rx[0] + 2 * Rx[1] + 3 * Rx[2]) * np.ones(grid32.shape)
    # coordinates wrap at -L/2, where negation maps the node to itself
    inner = (np.abs(x1) < grid32.L / 2) & (np.abs(x2) < grid32.L / 2) & (np.abs(x3) < grid32.L / 2)
    inner = np.broadcast_to(inner, grid32.shape)
    assert np.max(np.abs(g - expected)[inner]) < 1e-12


@settings(max_examples=6, deadline=None)
@given(st.tuples(*[st.floats(-0.55, 0.55)] * 3))
def test_rotation_covariance(v):
    assert rotation_covariance(v, PotentialSpec.gaussian(), FourierGrid3(16, 8.0)) < 1e-12


def test_supersonic_norm_counts_exclusions():
    nrm, excluded = supersonic_real_part_norm((0, 0, 1.5), PotentialSpec.gaussian(), FourierGrid3(32, 16.0))
    assert np.isfinite(nrm) and nrm > 0 and excluded >= 0
    scan = supersonic_scan((0, 0, 1.5), PotentialSpec.gaussian(), (16, 24), 0.5)
    assert len(scan["ratios"]) == 1


def test_subsonic_control_converges():
    scan = supersonic_scan((0, 0, 0.5), PotentialSpec.gaussian(), (32, 48, 64), 0.5)
    assert np.all(np.abs(np.asarray(scan["ratios"]) - 1) < 0.05)


def test_uniform_bounds_are_finite(gauss):
    rep = check_uniform_bounds((0, 0, 0.5), (0, 0, 0.55), gauss, FourierGrid3(32, 16.0))
    assert rep["finite"]
