"""Inertial profiles: a particle moving at constant velocity with its splash.

For subsonic and sonic velocities the diagonalized profile is

    G_hat(xi) = -W_hat(xi) / h_v(xi),   h_v = |xi| <xi> - v.xi,

with the zero mode removed, and gamma = U_r G solves

    -i v.grad gamma = -Laplace gamma + Re gamma + W.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fitting import DecayFit, fit_spatial_decay
from .potentials import PotentialSpec, potential_hat
from .spectral import (
    ComplexField,
    FourierGrid3,
    bracket,
    ifft3,
    fft3,
    imag_part_hat,
    physical_field,
    real_part_hat,
    spectral_field,
)

log = logging.getLogger(__name__)

SONIC_TOL = 1e-12
RESONANCE_TOL = 1e-12
SUPERSONIC_TOL = 1e-8


class Regime(Enum):
    SUBSONIC = "subsonic"
    SONIC = "sonic"
    SUPERSONIC = "supersonic"


def regime_of(v) -> Regime:
    speed = float(np.linalg.norm(v))
    if abs(speed - 1.0) <= SONIC_TOL:
        return Regime.SONIC
    return Regime.SUBSONIC if speed < 1.0 else Regime.SUPERSONIC


def drift_symbol(grid: FourierGrid3, v) -> np.ndarray:
    """Samples of v.xi using the Nyquist-free odd wavenumber table."""
    k1, k2, k3 = grid.axes(grid.odd_wavenumbers)
    return v[0] * k1 + v[1] * k2 + v[2] * k3


def h_v_grid(grid: FourierGrid3, v) -> np.ndarray:
    return grid.xi_norm * bracket(grid.xi_norm) - drift_symbol(grid, np.asarray(v, float))


def u_grid(grid: FourierGrid3) -> np.ndarray:
    return grid.xi_norm / bracket(grid.xi_norm)


@dataclass(eq=False)
class WaveProfile:
    velocity: np.ndarray
    G: ComplexField
    regime: Regime
    excluded_nodes: int = 0
    min_abs_h: float = np.inf

    @property
    def grid(self) -> FourierGrid3:
        return self.G.grid

    @property
    def gamma(self) -> ComplexField:
        """gamma = U_r G in spectral form."""
        g = self.grid
        gh = self.G.data
        return spectral_field(g, u_grid(g) * real_part_hat(g, gh) + 1j * imag_part_hat(g, gh))

    @property
    def gamma_re(self) -> ComplexField:
        return physical_field(self.grid, self.gamma.physical().real)

    @property
    def gamma_im(self) -> ComplexField:
        return physical_field(self.grid, self.gamma.physical().imag)


def solve_profile(v, spec: PotentialSpec, grid: FourierGrid3) -> WaveProfile:
    """Traveling-wave profile for |v| <= 1 on the grid."""
    v = np.asarray(v, dtype=float)
    regime = regime_of(v)
    if regime is Regime.SUPERSONIC:
        raise ValueError(f"|v| = {np.linalg.norm(v):.6g} > 1 has no finite-energy profile; use supersonic_scan")
    hv = h_v_grid(grid, v)
    hv[0, 0, 0] = np.inf
    bad = np.abs(hv) < RESONANCE_TOL
    hv[bad] = np.inf
    excluded = int(bad.sum())
    if excluded:
        log.warning("excluded %d near-resonant nodes", excluded)
    gh = -potential_hat(spec, grid) / hv
    finite_h = np.abs(hv[np.isfinite(hv)])
    return WaveProfile(v, spectral_field(grid, gh), regime, excluded, float(finite_h.min()))


def residual(profile: WaveProfile, spec: PotentialSpec) -> float:
    """L2 norm of  (-i v.grad + Laplace - Re - W) gamma, zero mode excluded.

    Re gamma and Im gamma are separated in physical space, so this does not
    reuse the algebra of the solver.
    """
    g = profile.grid
    gam = profile.gamma.physical()
    gh = fft3(g, gam)
    re_h = fft3(g, gam.real.astype(complex))
    lhs = drift_symbol(g, profile.velocity) * gh
    rhs = g.xi_norm**2 * gh + re_h + potential_hat(spec, g)
    diff = lhs - rhs
    diff[0, 0, 0] = 0.0
    return float(np.sqrt(np.sum(np.abs(diff) ** 2) / g.L**3))


def force_on_particle(beta: ComplexField, spec: PotentialSpec, X, w_hat=None) -> np.ndarray:
    """int grad W(x - X) Re beta(x) dx, by Parseval on the grid."""
    g = beta.grid
    w_hat = potential_hat(spec, g) if w_hat is None else w_hat
    re_hat = real_part_hat(g, beta.spectral())
    src = w_hat * np.conj(g.translation_phase(np.asarray(X, float))) * re_hat
    out = np.empty(3)
    for j, k in enumerate(g.axes(g.odd_wavenumbers)):
        # conj(i k W_hat phase) * re_hat
        out[j] = np.sum((-1j * k) * src).real / g.L**3
    return out


def fit_profile_decay(profile: WaveProfile, window=(3.0, 24.0)) -> dict:
    return {
        "re": fit_spatial_decay(profile.gamma_re, window, "abs"),
        "im": fit_spatial_decay(profile.gamma_im, window, "abs"),
    }


# ----------------------------------------------------------------------------
# supersonic divergence
# ----------------------------------------------------------------------------


def supersonic_real_part_norm(v, spec: PotentialSpec, grid: FourierGrid3, tol: float = SUPERSONIC_TOL):
    """||Re gamma_v||_L2 from Re gamma_hat = -W_hat / (1 + |xi|^2 - (v.xi/|xi|)^2).

    Nodes whose denominator is within ``tol`` of zero are excluded.
    """
    v = np.asarray(v, dtype=float)
    r = grid.xi_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        k1, k2, k3 = grid.axes(grid.wavenumbers)
        proj = (v[0] * k1 + v[1] * k2 + v[2] * k3) / r
        denom = 1.0 + r**2 - proj**2
    denom[0, 0, 0] = np.inf
    excl = np.abs(denom) < tol
    denom[excl] = np.inf
    re_hat = -spec.fourier(r) / denom
    return float(np.sqrt(np.sum(np.abs(re_hat) ** 2) / grid.L**3)), int(excl.sum())


def supersonic_scan(v, spec: PotentialSpec, resolutions=(32, 48, 64, 96), spacing: float = 0.5) -> dict:
    """Norm of Re gamma_v on boxes of growing size at fixed spacing.

    Growing N at fixed spacing refines the dual lattice, so the sum samples
    the resonance surface ever more densely.
    """
    norms, excluded = [], []
    for n in resolutions:
        nrm, ex = supersonic_real_part_norm(v, spec, FourierGrid3(n, n * spacing))
        norms.append(nrm)
        excluded.append(ex)
    norms = np.array(norms)
    ratios = norms[1:] / norms[:-1]
    return {
        "velocity": list(map(float, v)),
        "resolutions": list(resolutions),
        "spacing": spacing,
        "norms": norms.tolist(),
        "ratios": ratios.tolist(),
        "growth": float(norms[-1] / norms[0]),
        "strictly_increasing": bool(np.all(ratios > 1.0)),
        "excluded_nodes": excluded,
    }


# ----------------------------------------------------------------------------
# uniform operator bounds
# ----------------------------------------------------------------------------


def _bound_ratios(v, vp, spec: PotentialSpec, grid: FourierGrid3):
    w_hat = potential_hat(spec, grid)
    w_l2 = np.sqrt(np.sum(np.abs(w_hat) ** 2) / grid.L**3)
    hv = h_v_grid(grid, v)
    hvp = h_v_grid(grid, vp)
    hv[0, 0, 0] = hvp[0, 0, 0] = np.inf
    a = w_hat / hv
    linf = lambda fh: float(np.max(np.abs(ifft3(grid, fh))))
    dv = float(np.linalg.norm(np.asarray(v, float) - np.asarray(vp, float)))
    diff = 0.0 if dv == 0 else linf(w_hat / hv - w_hat / hvp) / (dv * w_l2)
    return np.array([linf(u_grid(grid) * a) / w_l2, linf(a) / w_l2, diff])


def check_uniform_bounds(v, vp, spec: PotentialSpec, grid: FourierGrid3 | None = None) -> dict:
    """Ratios of sup norms of H_v^-1 W type quantities to ||W||_L2 on two resolutions."""
    grid = grid or FourierGrid3(64, 32.0)
    fine = FourierGrid3(2 * grid.N, grid.L)
    coarse_r = _bound_ratios(v, vp, spec, grid)
    fine_r = _bound_ratios(v, vp, spec, fine)
    with np.errstate(divide="ignore", invalid="ignore"):
        change = np.where(coarse_r > 0, np.abs(fine_r / coarse_r - 1.0), 0.0)
    names = ["U_Hv_inv_W", "Hv_inv_W", "Hv_inv_difference"]
    return {
        "ratios": dict(zip(names, fine_r.tolist())),
        "coarse_ratios": dict(zip(names, coarse_r.tolist())),
        "refinement_change": dict(zip(names, change.tolist())),
        "finite": bool(np.all(np.isfinite(fine_r))),
        "stable": bool(np.all(change <= 0.10)),
    }


def regularity_split(profile: WaveProfile, band=(0.1, 1.0), min_cos: float = 0.2) -> tuple:
    """Range of |F(Im G)| |xi| / |F(U Re G)| over a shell band.

    Directions nearly orthogonal to v are skipped because Im G vanishes
    there by symmetry.
    """
    g = profile.grid
    gh = profile.G.data
    im_h = imag_part_hat(g, gh)
    re_h = u_grid(g) * real_part_hat(g, gh)
    r = g.xi_norm
    v = profile.velocity
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = drift_symbol(g, v) / (r * np.linalg.norm(v))
        sel = (r >= band[0]) & (r <= band[1]) & (np.abs(cos) >= min_cos)
        ratio = np.abs(im_h[sel]) * r[sel] / np.abs(re_h[sel])
    return float(ratio.min()), float(ratio.max())


# ----------------------------------------------------------------------------
# continuum samples (no periodic images)
# ----------------------------------------------------------------------------


def graded_rule(lo: float, hi: float, first: float, panel: float, order: int = 16):
    """Gauss-Legendre panels on [lo, hi], geometric near lo, uniform beyond."""
    edges = [lo]
    w = first
    while edges[-1] + w < min(hi, lo + panel):
        edges.append(edges[-1] + w)
        w *= 2.0
    while edges[-1] < hi - 1e-14:
        edges.append(min(hi, edges[-1] + panel))
    x, wt = np.polynomial.legendre.leggauss(order)
    e = np.asarray(edges)
    a, b = e[:-1, None], e[1:, None]
    return (0.5 * (b - a) * x + 0.5 * (b + a)).ravel(), (0.5 * (b - a) * wt).ravel()


def continuum_profile(v, spec: PotentialSpec, radii, angles, rho_max: float | None = None):
    """Re and Im of the whole-space profile at points (r, angle to v).

    Uses the axial symmetry about v: the azimuthal integral is a Bessel
    function, leaving a graded 2-D quadrature in (|xi|, cos angle).  Returns
    arrays of shape (len(radii), len(angles)).
    """
    from scipy.special import j0

    v = np.asarray(v, dtype=float)
    speed = float(np.linalg.norm(v))
    if speed > 1.0 + SONIC_TOL:
        raise ValueError("continuum profile needs |v| <= 1")
    if rho_max is None:
        rho_max = 1.0
        while abs(spec.fourier(rho_max)) > 1e-14 * abs(spec.fourier(0.0)):
            rho_max += 0.5
    rho, wr = graded_rule(0.0, rho_max, 1e-7, 0.25)
    t, wt = graded_rule(0.0, 1.0, 1e-9, 0.05)  # t = 1 - mu on [0, 1]
    mu = 1.0 - t
    R, MU = rho[:, None], mu[None, :]
    D = 1.0 + R**2 - (speed * MU) ** 2
    what = spec.fourier(R)
    a_hat = -what / D  # real part, even in mu
    b_core = -what * speed * MU / (R * D)  # Im gamma_hat = i * (-b_core)... odd in mu
    weight = (R**2) * wr[:, None] * wt[None, :] * 2.0 / (2.0 * np.pi) ** 2
    radii = np.asarray(radii, float)
    angles = np.asarray(angles, float)
    re = np.empty((radii.size, angles.size))
    im = np.empty_like(re)
    s = np.sqrt(np.clip(1.0 - MU**2, 0.0, None))
    for i, r in enumerate(radii):
        for j, th in enumerate(angles):
            z, rp = r * np.cos(th), r * np.sin(th)
            jb = j0(R * s * rp)
            re[i, j] = np.sum(weight * a_hat * jb * np.cos(R * MU * z))
            im[i, j] = np.sum(weight * b_core * jb * np.sin(R * MU * z))
    return re, im


def fit_continuum_decay(v, spec: PotentialSpec, window=(3.0, 24.0), shells: int = 22, n_angles: int = 61) -> dict:
    """Shell-max decay fits from continuum samples on a polar fan about v."""
    radii = np.linspace(window[0], window[1], shells)
    angles = np.linspace(0.0, np.pi, n_angles)
    re, im = continuum_profile(v, spec, radii, angles)
    from .fitting import fit_loglog

    out = {}
    for name, arr in (("re", re), ("im", im)):
        fit = fit_loglog(np.sqrt(1.0 + radii**2), np.max(np.abs(arr), axis=1))
        out[name] = DecayFit(fit.exponent, fit.prefactor, tuple(window), fit.goodness, fit.samples)
    return out


# ----------------------------------------------------------------------------
# rotation covariance
# ----------------------------------------------------------------------------


def cube_rotations() -> list:
    """The 24 proper rotations that map the grid onto itself (signed permutations, det +1)."""
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            R = np.zeros((3, 3))
            R[np.arange(3), perm] = signs
            if np.linalg.det(R) > 0:
                out.append(R)
    return out


def rotate_samples(values: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Samples of x -> f(R x) from samples of f, for a signed permutation R."""
    N = values.shape[0]
    idx = np.indices(values.shape)
    perm = np.argmax(np.abs(R), axis=1)
    signs = R[np.arange(3), perm]
    take = tuple((int(s) * idx[p]) % N for p, s in zip(perm, signs))
    return values[take]


def rotation_covariance(v, spec: PotentialSpec, grid: FourierGrid3) -> float:
    """max over cube rotations R of |gamma_{Rv}(R x) - gamma_v(x)| / max |gamma_v|."""
    base = solve_profile(v, spec, grid).gamma.physical()
    scale = float(np.max(np.abs(base)))
    worst = 0.0
    for R in cube_rotations():
        other = solve_profile(R @ np.asarray(v, float), spec, grid).gamma.physical()
        worst = max(worst, float(np.max(np.abs(rotate_samples(other, R) - base))))
    return worst / scale
