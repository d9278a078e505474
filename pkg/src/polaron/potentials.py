"""Radial coupling potentials W with their Fourier transforms."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import interpolate, optimize

from .spectral import ComplexField, FourierGrid3, fft3, physical_field

TWO_PI_32 = (2.0 * np.pi) ** 1.5


class PotentialKind(Enum):
    GAUSSIAN = "gaussian"
    TABULATED_RADIAL = "tabulated_radial"


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """A spherically symmetric potential.

    Gaussian: ``W(x) = A exp(-|x|^2 / (2 sigma^2))``.
    Tabulated: radial samples ``(r, W(r))`` with W taken as 0 beyond the
    last radius; the transform is computed by radial quadrature.
    """

    kind: PotentialKind = PotentialKind.GAUSSIAN
    amplitude: float = 1.0
    width: float = 1.0
    radii: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    transform: Optional[Callable] = None

    @classmethod
    def gaussian(cls, amplitude=1.0, width=1.0):
        if width <= 0:
            raise ValueError("Gaussian width must be positive")
        return cls(PotentialKind.GAUSSIAN, float(amplitude), float(width))

    @classmethod
    def tabulated(cls, radii, values, transform=None):
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        if radii.ndim != 1 or radii.shape != values.shape or np.any(np.diff(radii) <= 0):
            raise ValueError("tabulated potential needs increasing radii and matching values")
        return cls(PotentialKind.TABULATED_RADIAL, 1.0, 1.0, radii, values, transform)

    @property
    def extent(self) -> float:
        """Radius containing the bulk of W (sigma, or the table's half-mass radius)."""
        if self.kind is PotentialKind.GAUSSIAN:
            return self.width
        w = np.abs(self.values) * self.radii**2
        cum = np.cumsum(w)
        return float(self.radii[np.searchsorted(cum, 0.5 * cum[-1])])

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind is PotentialKind.GAUSSIAN:
            return self.amplitude * np.exp(-0.5 * (r / self.width) ** 2)
        return self._spline(r)

    def fourier(self, rho):
        """Continuum transform int W(x) exp(-i xi.x) dx as a function of |xi|."""
        rho = np.asarray(rho, dtype=float)
        if self.kind is PotentialKind.GAUSSIAN:
            s = self.width
            return self.amplitude * TWO_PI_32 * s**3 * np.exp(-0.5 * (s * rho) ** 2)
        if self.transform is not None:
            return self.transform(rho)
        return self._hankel(rho)

    def fourier_unitary(self, rho):
        """Transform in the L2-unitary convention."""
        return self.fourier(rho) / TWO_PI_32

    # -- tabulated helpers ---------------------------------------------------

    @property
    def _spline(self):
        cache = self.__dict__.get("_spline_cache")
        if cache is None:
            cs = interpolate.CubicSpline(self.radii, self.values, bc_type=((1, 0.0), "not-a-knot"))
            rmax = self.radii[-1]

            def cache(r):
                return np.where(r <= rmax, cs(np.minimum(r, rmax)), 0.0)

            self.__dict__["_spline_cache"] = cache
        return cache

    def _hankel(self, rho):
        # 4 pi int W(r) r^2 sinc(rho r) dr on a fine Gauss-Legendre rule
        nodes, weights = np.polynomial.legendre.leggauss(400)
        rmax = self.radii[-1]
        edges = np.linspace(0.0, rmax, 41)
        rs, ws = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            rs.append(0.5 * (hi - lo) * nodes + 0.5 * (hi + lo))
            ws.append(0.5 * (hi - lo) * weights)
        r = np.concatenate(rs)
        w = np.concatenate(ws) * self.radial(r) * r**2 * 4.0 * np.pi
        flat = np.ravel(rho)
        out = np.array([np.sum(w * np.sinc(q * r / np.pi)) for q in flat])
        return out.reshape(np.shape(rho))


def bandpass_potential(lo: float, hi: float, amplitude: float = 1.0, r_max: float = 40.0, n: int = 4001):
    """Tabulated W whose transform is a smooth bump supported in lo <= |xi| <= hi.

    The transform vanishes identically on the ball ``|xi| < lo``, which is
    used to build couplings that are blind to low-frequency resonances.
    """
    def bump_of(q):
        s = (np.asarray(q, dtype=float) - lo) / (hi - lo)
        inside = (s > 0) & (s < 1)
        sc = np.where(inside, s, 0.5)
        return np.where(inside, amplitude * np.exp(4.0 - 1.0 / (sc * (1.0 - sc))), 0.0)

    nodes, weights = np.polynomial.legendre.leggauss(600)
    q = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    wq = 0.5 * (hi - lo) * weights
    bump = bump_of(q)
    r = np.linspace(0.0, r_max, n)
    # W(r) = (2 pi)^-3 4 pi int W_hat(q) q^2 sinc(q r) dq
    kern = np.sinc(np.outer(r, q) / np.pi)
    vals = (kern * (bump * q**2 * wq)).sum(axis=1) * 4.0 * np.pi / (2.0 * np.pi) ** 3
    return PotentialSpec.tabulated(r, vals, transform=bump_of)


# ----------------------------------------------------------------------------
# grid evaluation
# ----------------------------------------------------------------------------


def eval_W(spec: PotentialSpec, grid: FourierGrid3) -> ComplexField:
    """Physical samples of W centred at the origin (minimal image)."""
    if spec.extent > grid.L / 8:
        raise ValueError(f"potential extent {spec.extent} too large for box L={grid.L}")
    return physical_field(grid, spec.radial(grid.r_norm).astype(complex))


def potential_hat(spec: PotentialSpec, grid: FourierGrid3) -> np.ndarray:
    """Spectral samples of W used by all dynamics.

    Real and even by construction; Nyquist planes are zeroed so every
    translated copy of W stays exactly real.
    """
    w = fft3(grid, spec.radial(grid.r_norm))
    w = 0.5 * (w + np.conj(grid.mirror(w)))
    w = w.real.astype(complex)
    w[grid.nyquist_mask] = 0.0
    return w


def weighted_norm(f: ComplexField, N: int) -> float:
    """Discrete ||<x>^N f||_L2 with minimal-image |x|."""
    g = f.grid
    weight = (1.0 + g.r_norm**2) ** N
    return float(np.sqrt(np.sum(weight * np.abs(f.physical()) ** 2) * g.cell_volume))


def _fourier_roots(spec: PotentialSpec, rho_max: float, n: int = 2000):
    rho = np.linspace(0.0, rho_max, n)
    vals = spec.fourier(rho)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
        roots.append(optimize.bisect(spec.fourier, rho[i], rho[i + 1], xtol=1e-12))
    return roots, float(np.min(np.abs(vals)))


def check_hypotheses(spec: PotentialSpec, v, grid: Optional[FourierGrid3] = None) -> dict:
    """Report on the standing assumptions of the stability theory."""
    grid = grid or FourierGrid3(64, 32.0)
    speed = float(np.linalg.norm(v))
    w = eval_W(spec, grid)
    x1, x2, x3 = grid.axes(grid.coordinates)
    # permuted and reflected copies coincide for a radial profile
    data = w.physical().real
    sym_err = max(
        np.max(np.abs(data - np.transpose(data, (1, 0, 2)))),
        np.max(np.abs(data - np.transpose(data, (2, 1, 0)))),
        np.max(np.abs(data[1:, :, :] - data[1:, :, :][::-1, :, :])),
    )
    what = np.abs(spec.fourier(grid.xi_norm))
    roots, min_radial = _fourier_roots(spec, grid.xi_max * np.sqrt(3))
    wn6 = weighted_norm(w, 6)
    return {
        "spherically_symmetric": bool(sym_err <= 1e-12 * max(1.0, np.max(np.abs(data)))),
        "symmetry_error": float(sym_err),
        "min_abs_W_hat": float(np.min(what)),
        "W_hat_roots": roots,
        "nowhere_vanishing": bool(not roots and np.min(what) > 0),
        "weighted_norm_6": wn6,
        "weighted_norm_finite": bool(np.isfinite(wn6)),
        "subsonic": bool(speed < 1.0),
        "speed": speed,
    }
