import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polaron.spectral import (
    FourierGrid3,
    apply_multiplier,
    apply_Ur,
    apply_Ur_inv,
    h_symbol,
    h_v_symbol,
    imag_part_hat,
    lp_cutoff,
    lp_project,
    lp_psi,
    physical_field,
    propagator_symbol,
    real_part_hat,
    resolvable_bands,
    to_physical,
    to_spectral,
    u_symbol,
    verify_symbol_class,
)
from conftest import smooth_random_field


def test_round_trip_and_parseval(grid32, rng):
    f = physical_field(grid32, smooth_random_field(grid32, rng))
    back = to_physical(to_spectral(f))
    assert np.max(np.abs(back.data - f.data)) <= 1e-12 * np.max(np.abs(f.data))
    direct = np.sum(np.abs(f.data) ** 2) * grid32.cell_volume
    spectral = np.sum(np.abs(to_spectral(f).data) ** 2) / grid32.L**3
    assert spectral == pytest.approx(direct, rel=1e-12)


def test_gaussian_transform_matches_continuum():
    # spacing 1/4 puts the first spectral alias at 8 pi, far beyond the Gaussian's reach
    g = FourierGrid3(64, 16.0)
    f = physical_field(g, np.exp(-0.5 * g.r_norm**2).astype(complex))
    exact = (2 * np.pi) ** 1.5 * np.exp(-0.5 * g.xi_norm**2)
    assert np.max(np.abs(to_spectral(f).data - exact)) < 1e-12


def test_lattice_translation_is_a_cyclic_shift(grid32, rng):
    f = physical_field(grid32, smooth_random_field(grid32, rng))
    shift = np.array([3, -2, 5])
    X = shift * grid32.dx
    moved = to_physical(to_spectral(f).like(to_spectral(f).data * grid32.translation_phase(X)))
    assert np.max(np.abs(moved.data - np.roll(f.data, tuple(shift), axis=(0, 1, 2)))) < 1e-12


def test_real_and_imaginary_parts_split_exactly(grid32, rng):
    data = smooth_random_field(grid32, rng)
    fh = to_spectral(physical_field(grid32, data)).data
    re = np.fft.ifftn(real_part_hat(grid32, fh)) / grid32.cell_volume
    im = np.fft.ifftn(imag_part_hat(grid32, fh)) / grid32.cell_volume
    assert np.max(np.abs(re - data.real)) < 1e-12
    assert np.max(np.abs(im - data.imag)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(t=st.floats(-50, 50), a=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_propagator_is_unitary_and_linear(t, a):
    g = FourierGrid3(16, 8.0)
    rng = np.random.default_rng(7)
    f = physical_field(g, smooth_random_field(g, rng))
    h = physical_field(g, smooth_random_field(g, rng, width=0.8))
    m = propagator_symbol(t)
    out = apply_multiplier(f, m)
    assert out.norm() == pytest.approx(f.norm(), rel=1e-12)
    lhs = apply_multiplier(f * a + h, m).data
    rhs = a * out.data + apply_multiplier(h, m).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_Ur_inverse_pair(grid32, rng):
    f = physical_field(grid32, smooth_random_field(grid32, rng))
    # drop the mean of Re f, which U annihilates
    f = f.like(f.data - f.data.real.mean())
    back = apply_Ur(apply_Ur_inv(f))
    assert np.max(np.abs(back.data - f.data)) < 1e-10


def test_littlewood_paley_pieces_sum_to_cutoff():
    r = np.linspace(1e-3, 50, 4001)
    total = lp_cutoff(r / 2.0**-4) + sum(lp_psi(r / 2.0**k) for k in range(-3, 7))
    inside = r <= 2.0**6
    assert np.max(np.abs(total[inside] - 1.0)) < 1e-14
    assert np.all(lp_psi(np.array([0.49, 2.01])) == 0.0)


def test_band_projection_support(grid64, rng):
    f = physical_field(grid64, smooth_random_field(grid64, rng, width=0.3))
    k = resolvable_bands(grid64)[0]
    ph = lp_project(to_spectral(f), k).data
    outside = (grid64.xi_norm < 2.0 ** (k - 1)) | (grid64.xi_norm > 2.0 ** (k + 1))
    assert np.max(np.abs(ph[outside])) == 0.0
    with pytest.raises(ValueError):
        lp_project(f, 10)


@pytest.mark.parametrize("m, a, b", [(u_symbol(), 1, 0), (h_symbol(), 1, 2), (h_v_symbol((0, 0, 0.5)), 1, 2)])
def test_symbol_classes_saturate(m, a, b):
    assert verify_symbol_class(m, a, b)["pass"]


def test_symbol_class_detects_wrong_exponent():
    assert not verify_symbol_class(h_symbol(), 1, 1)["pass"]
