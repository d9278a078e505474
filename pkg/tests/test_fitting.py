import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polaron.fitting import fit_loglog, fit_spatial_decay, fit_temporal_decay, shell_maxima
from polaron.spectral import FourierGrid3, physical_field


def test_synthetic_temporal_power_law():
    t = np.linspace(0, 40, 401)
    fit = fit_temporal_decay(t, (1 + t) ** -3.0, (2, 40))
    assert fit.exponent == pytest.approx(-3.0, abs=0.02)
    assert fit.goodness > 0.999


@settings(max_examples=30, deadline=None)
@given(p=st.floats(-8, -0.2), c=st.floats(1e-6, 1e3))
def test_fit_recovers_any_exponent_and_prefactor(p, c):
    t = np.linspace(1, 50, 200)
    fit = fit_temporal_decay(t, c * (1 + t) ** p, (1, 50))
    assert fit.exponent == pytest.approx(p, abs=1e-9)
    assert fit.prefactor == pytest.approx(c, rel=1e-8)


def test_too_few_samples_rejected():
    t = np.linspace(0, 10, 11)
    with pytest.raises(ValueError):
        fit_temporal_decay(t, (1 + t) ** -2, (2, 6))


def test_floor_excludes_noise():
    x = np.linspace(1, 100, 300)
    y = x**-4.0
    y[x > 60] = 1e-30
    assert fit_loglog(x, y, floor=1e-20).exponent == pytest.approx(-4.0, abs=1e-10)


def test_spatial_fit_of_power_law_field():
    g = FourierGrid3(128, 64.0)
    f = physical_field(g, ((1 + g.r_norm**2) ** -1.5).astype(complex))
    fit = fit_spatial_decay(f, (3.0, 24.0))
    assert fit.exponent == pytest.approx(-3.0, abs=0.1)
    assert fit.reliable


def test_spatial_window_must_fit_in_box():
    g = FourierGrid3(32, 16.0)
    with pytest.raises(ValueError):
        fit_spatial_decay(physical_field(g, np.ones(g.shape, complex)), (3.0, 24.0))


def test_shell_maxima_pick_the_largest_sample():
    r = np.array([1.0, 1.2, 1.4, 2.1, 2.2])
    v = np.array([5.0, -7.0, 1.0, 2.0, 3.0])
    centres, maxima = shell_maxima(v, r, (1.0, 3.0), 1.0)
    assert maxima.tolist() == [7.0, 3.0]
