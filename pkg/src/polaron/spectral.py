"""Periodic 3-D Fourier grids, multipliers and the diagonalizing operators.

Conventions
-----------
The spectral representation approximates the continuum transform
``f_hat(xi) = int f(x) exp(-i xi.x) dx``: the forward FFT is scaled by the
cell volume ``(L/N)**3`` and the inverse by ``N**3 / L**3``.  With this choice

    sum_x |f|^2 dx^3 == sum_xi |f_hat|^2 / L^3

so every L2 pairing can be evaluated on whichever side is cheaper.

Arrays are indexed ``[i1, i2, i3]`` with axis 0 along x1.  Positions use the
minimal-image convention, so the origin sits at index 0 and coordinates lie in
``[-L/2, L/2)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Set the thread count used by every FFT in the package.

    pocketfft splits work over independent 1-D lines, so results do not
    depend on the thread count.
    """
    global _FFT_WORKERS
    if n < 1:
        raise ValueError("worker count must be positive")
    _FFT_WORKERS = int(n)


def bracket(r):
    """Japanese bracket <r> = sqrt(1 + r^2)."""
    return np.sqrt(1.0 + np.square(r))


# ----------------------------------------------------------------------------
# grid
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FourierGrid3:
    """Cubic periodic box with ``N`` points per axis and side ``L``."""

    points_per_axis: int
    box_length: float

    def __post_init__(self):
        n, length = self.points_per_axis, self.box_length
        if int(n) != n or n < 8 or n % 2:
            raise ValueError(f"points per axis must be an even integer >= 8, got {n}")
        if not np.isfinite(length) or length <= 0:
            raise ValueError(f"box length must be positive, got {length}")

    @property
    def N(self) -> int:
        return int(self.points_per_axis)

    @property
    def L(self) -> float:
        return float(self.box_length)

    @property
    def shape(self):
        return (self.N,) * 3

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.dx**3

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / self.L

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """1-D table 2 pi k / L in FFT order, k = 0..N/2-1, -N/2..-1."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N)
        return self.dk * k

    @cached_property
    def odd_wavenumbers(self) -> np.ndarray:
        """Wavenumber table with the unpaired Nyquist entry set to zero.

        Odd symbols (derivatives, drift terms) use this table so that real
        fields stay real.
        """
        k = self.wavenumbers.copy()
        k[self.N // 2] = 0.0
        return k

    @cached_property
    def coordinates(self) -> np.ndarray:
        """1-D minimal-image coordinates in [-L/2, L/2), FFT order."""
        return np.fft.fftfreq(self.N, d=1.0 / self.L)

    @property
    def xi_max(self) -> float:
        """Largest positive wavenumber on an axis."""
        return self.dk * (self.N // 2 - 1)

    def axes(self, table: np.ndarray):
        """Broadcastable copies of a 1-D table along the three axes."""
        return table[:, None, None], table[None, :, None], table[None, None, :]

    @cached_property
    def xi_norm(self) -> np.ndarray:
        k1, k2, k3 = self.axes(self.wavenumbers)
        return np.sqrt(k1**2 + k2**2 + k3**2)

    @cached_property
    def r_norm(self) -> np.ndarray:
        x1, x2, x3 = self.axes(self.coordinates)
        return np.sqrt(x1**2 + x2**2 + x3**2)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on the three planes carrying a Nyquist component."""
        h = self.N // 2
        mask = np.zeros(self.shape, dtype=bool)
        mask[h, :, :] = True
        mask[:, h, :] = True
        mask[:, :, h] = True
        return mask

    def mirror(self, data: np.ndarray) -> np.ndarray:
        """Spectral samples at -xi (index -k mod N on every axis)."""
        return np.roll(data[::-1, ::-1, ::-1], 1, axis=(0, 1, 2))

    def translation_phase(self, X) -> np.ndarray:
        """Samples of exp(-i xi.X), the spectral form of f -> f(. - X).

        The Nyquist factor is replaced by its real part so translated real
        fields remain real; for lattice shifts it is exact.
        """
        factors = []
        for a in range(3):
            ph = np.exp(-1j * self.wavenumbers * X[a])
            ph[self.N // 2] = np.cos(self.wavenumbers[self.N // 2] * X[a])
            factors.append(ph)
        f1, f2, f3 = self.axes_of(factors)
        return f1 * f2 * f3

    @staticmethod
    def axes_of(tables):
        t1, t2, t3 = tables
        return t1[:, None, None], t2[None, :, None], t3[None, None, :]

    def sample(self, m: "SymbolFn") -> np.ndarray:
        """Evaluate a symbol on every grid node.

        Nodes on a Nyquist plane are averaged over the sign ambiguity of the
        Nyquist component; the origin gets ``m.origin_value`` (or 0 if the
        origin is excluded).
        """
        k1, k2, k3 = self.axes(self.wavenumbers)
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.broadcast_to(m.evaluator(k1, k2, k3), self.shape).astype(complex)
            mask = self.nyquist_mask
            idx = np.nonzero(mask)
            comps = [self.wavenumbers[i] for i in idx]
            nyq = [i == self.N // 2 for i in idx]
            acc = np.zeros(idx[0].shape, dtype=complex)
            for signs in itertools.product((1.0, -1.0), repeat=3):
                xi = [np.where(nyq[a], signs[a] * comps[a], comps[a]) for a in range(3)]
                acc += m.evaluator(*xi)
            values[idx] = acc / 8.0
        values[0, 0, 0] = 0.0 if m.origin_value is None else m.origin_value
        bad = ~np.isfinite(values)
        if bad.any():
            raise FloatingPointError(f"symbol is non-finite at {int(bad.sum())} grid nodes")
        return values


def make_grid(N: int, L: float) -> FourierGrid3:
    return FourierGrid3(N, L)


# ----------------------------------------------------------------------------
# fields
# ----------------------------------------------------------------------------


class Representation(Enum):
    PHYSICAL = "physical"
    SPECTRAL = "spectral"


@dataclass(eq=False)
class ComplexField:
    """Complex samples on a grid, tagged physical or spectral."""

    grid: FourierGrid3
    data: np.ndarray
    representation: Representation = Representation.PHYSICAL

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != self.grid.shape:
            raise ValueError(f"field shape {self.data.shape} does not match grid {self.grid.shape}")

    @property
    def is_spectral(self) -> bool:
        return self.representation is Representation.SPECTRAL

    def spectral(self) -> np.ndarray:
        return self.data if self.is_spectral else to_spectral(self).data

    def physical(self) -> np.ndarray:
        return to_physical(self).data if self.is_spectral else self.data

    def norm(self) -> float:
        """Discrete L2 norm (same value in either representation)."""
        if self.is_spectral:
            return float(np.sqrt(np.sum(np.abs(self.data) ** 2) / self.grid.L**3))
        return float(np.sqrt(np.sum(np.abs(self.data) ** 2) * self.grid.cell_volume))

    def like(self, data, representation=None) -> "ComplexField":
        return ComplexField(self.grid, data, representation or self.representation)

    def __add__(self, other):
        return self.like(self.data + _coerce(other, self.representation))

    def __sub__(self, other):
        return self.like(self.data - _coerce(other, self.representation))

    def __mul__(self, scalar):
        return self.like(self.data * scalar)

    __rmul__ = __mul__


def _coerce(other: ComplexField, rep: Representation) -> np.ndarray:
    if other.representation is rep:
        return other.data
    return other.spectral() if rep is Representation.SPECTRAL else other.physical()


def physical_field(grid: FourierGrid3, data) -> ComplexField:
    return ComplexField(grid, data, Representation.PHYSICAL)


def spectral_field(grid: FourierGrid3, data) -> ComplexField:
    return ComplexField(grid, data, Representation.SPECTRAL)


def fft3(grid: FourierGrid3, data: np.ndarray) -> np.ndarray:
    return sfft.fftn(data, workers=_FFT_WORKERS) * grid.cell_volume


def ifft3(grid: FourierGrid3, data: np.ndarray) -> np.ndarray:
    return sfft.ifftn(data, workers=_FFT_WORKERS) * (grid.N**3 / grid.L**3)


def to_spectral(f: ComplexField) -> ComplexField:
    if f.is_spectral:
        return f
    return spectral_field(f.grid, fft3(f.grid, f.data))


def to_physical(f: ComplexField) -> ComplexField:
    if not f.is_spectral:
        return f
    return physical_field(f.grid, ifft3(f.grid, f.data))


def real_part_hat(grid: FourierGrid3, fh: np.ndarray) -> np.ndarray:
    """Spectral samples of Re f given spectral samples of f."""
    return 0.5 * (fh + np.conj(grid.mirror(fh)))


def imag_part_hat(grid: FourierGrid3, fh: np.ndarray) -> np.ndarray:
    """Spectral samples of Im f given spectral samples of f."""
    return -0.5j * (fh - np.conj(grid.mirror(fh)))


# ----------------------------------------------------------------------------
# symbols
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolFn:
    """A Fourier symbol ``m(xi)``.

    ``evaluator`` takes three broadcastable component arrays.  ``origin_value``
    is used at xi = 0; ``None`` means the origin is excluded and the zero mode
    of the output is set to 0.  ``class_tag`` optionally records a claimed
    class (a, b): ``|m| <~ |xi|^a`` near 0 and ``|xi|^b`` at infinity.
    """

    evaluator: Callable
    origin_value: Optional[complex] = None
    class_tag: Optional[tuple] = None
    name: str = ""

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return self.evaluator(xi[..., 0], xi[..., 1], xi[..., 2])


def _norm3(k1, k2, k3):
    return np.sqrt(k1 * k1 + k2 * k2 + k3 * k3)


def u_symbol(mu: float = 1.0) -> SymbolFn:
    """Symbol of U, |xi| / sqrt(|xi|^2 + mu)."""
    return SymbolFn(lambda a, b, c: _norm3(a, b, c) / np.sqrt(_norm3(a, b, c) ** 2 + mu), 0.0, (1, 0), "u")


def u_inv_symbol(mu: float = 1.0) -> SymbolFn:
    return SymbolFn(lambda a, b, c: np.sqrt(_norm3(a, b, c) ** 2 + mu) / _norm3(a, b, c), None, (-1, 0), "u_inv")


def h_symbol(mu: float = 1.0) -> SymbolFn:
    """Symbol of H, |xi| sqrt(|xi|^2 + mu)."""
    return SymbolFn(lambda a, b, c: _norm3(a, b, c) * np.sqrt(_norm3(a, b, c) ** 2 + mu), 0.0, (1, 2), "h")


def symbol_h_v(xi, v) -> np.ndarray:
    """h_v(xi) = |xi| <xi> - v.xi for xi of shape (..., 3)."""
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi, axis=-1)
    return r * bracket(r) - xi @ np.asarray(v, dtype=float)


def h_v_symbol(v) -> SymbolFn:
    v1, v2, v3 = (float(c) for c in v)
    return SymbolFn(
        lambda a, b, c: _norm3(a, b, c) * bracket(_norm3(a, b, c)) - (v1 * a + v2 * b + v3 * c),
        0.0,
        (1, 2),
        "h_v",
    )


def h_v_inv_symbol(v) -> SymbolFn:
    hv = h_v_symbol(v)
    return SymbolFn(lambda a, b, c: 1.0 / hv.evaluator(a, b, c), None, (-1, -2), "h_v_inv")


def s_v_symbol(v) -> SymbolFn:
    """Symbol (<xi> - v.xi/|xi|)^-1 of the sonic regularizer S_v."""
    v1, v2, v3 = (float(c) for c in v)

    def ev(a, b, c):
        r = _norm3(a, b, c)
        return 1.0 / (bracket(r) - (v1 * a + v2 * b + v3 * c) / r)

    return SymbolFn(ev, None, None, "s_v")


def propagator_symbol(t: float, mu: float = 1.0) -> SymbolFn:
    """exp(-i t h)."""
    h = h_symbol(mu)
    return SymbolFn(lambda a, b, c: np.exp(-1j * t * h.evaluator(a, b, c)), 1.0, None, "propagator")


def apply_multiplier(f: ComplexField, m: SymbolFn) -> ComplexField:
    """Multiply spectral samples of ``f`` by ``m``; output keeps f's representation."""
    out = spectral_field(f.grid, f.spectral() * f.grid.sample(m))
    return out if f.is_spectral else to_physical(out)


def apply_Ur(f: ComplexField, mu: float = 1.0) -> ComplexField:
    """U_r f = U(Re f) + i Im f."""
    g = f.grid
    fh = f.spectral()
    out = spectral_field(g, g.sample(u_symbol(mu)) * real_part_hat(g, fh) + 1j * imag_part_hat(g, fh))
    return out if f.is_spectral else to_physical(out)


def apply_Ur_inv(f: ComplexField, mu: float = 1.0) -> ComplexField:
    """U_r^-1 f = U^-1(Re f) + i Im f, with the zero mode of Re f dropped."""
    g = f.grid
    fh = f.spectral()
    out = spectral_field(g, g.sample(u_inv_symbol(mu)) * real_part_hat(g, fh) + 1j * imag_part_hat(g, fh))
    return out if f.is_spectral else to_physical(out)


# ----------------------------------------------------------------------------
# Littlewood-Paley
# ----------------------------------------------------------------------------


def _smooth_step(y):
    """C-infinity step: 0 for y <= 0, 1 for y >= 1."""
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        b = np.where(y < 1, np.exp(-1.0 / np.where(y < 1, 1.0 - y, 1.0)), 0.0)
    return a / (a + b)


def lp_cutoff(r):
    """Radial profile equal to 1 on [0, 1] and 0 on [2, inf)."""
    return _smooth_step(2.0 - np.asarray(r, dtype=float))


def lp_psi(r):
    """Band profile supported on [1/2, 2]; dyadic dilates telescope to 1."""
    r = np.asarray(r, dtype=float)
    return lp_cutoff(r) - lp_cutoff(2.0 * r)


def resolvable_bands(grid: FourierGrid3) -> range:
    """Band indices k with 2^(k-1) >= 2 pi / L and 2^(k+1) <= xi_max."""
    k_lo = int(np.ceil(np.log2(grid.dk) + 1 - 1e-12))
    k_hi = int(np.floor(np.log2(grid.xi_max) - 1 + 1e-12))
    return range(k_lo, k_hi + 1)


def lp_project(f: ComplexField, k: int) -> ComplexField:
    g = f.grid
    if k not in resolvable_bands(g):
        raise ValueError(f"band {k} not resolvable on N={g.N}, L={g.L}")
    out = spectral_field(g, f.spectral() * lp_psi(g.xi_norm / 2.0**k))
    return out if f.is_spectral else to_physical(out)


# ----------------------------------------------------------------------------
# symbol classes
# ----------------------------------------------------------------------------


def _direction_set() -> np.ndarray:
    dirs = [d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)]
    extra = [(0.3, -0.5, 0.81), (-0.9, 0.2, 0.4), (0.11, 0.97, -0.23)]
    out = np.array(dirs + extra, dtype=float)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _class_constants(m: SymbolFn, a: float, b: float, r: np.ndarray, dirs: np.ndarray):
    xi = r[:, None, None] * dirs[None, :, :]
    rr = r[:, None]
    weight0 = np.where(rr <= 1, rr**a, rr**b)
    weight1 = np.where(rr <= 1, rr ** (a - 1), rr ** (b - 1))
    with np.errstate(all="ignore"):
        c0 = np.max(np.abs(m(xi)) / weight0)
        grad = np.zeros(xi.shape[:-1])
        for j in range(3):
            step = np.zeros(3)
            step[j] = 1.0
            h = 1e-5 * rr[..., None] * step
            d = (m(xi + h) - m(xi - h)) / (2e-5 * rr)
            grad = grad + np.abs(d) ** 2
        c1 = np.max(np.sqrt(grad) / weight1)
    return float(c0), float(c1)


def verify_symbol_class(m: SymbolFn, a: float, b: float, levels: int = 3) -> dict:
    """Measure the class constants of ``m`` on nested log-spaced radial sets.

    Level j samples ``|xi|`` in ``[1e-(3+2j), 1e(3+2j)]``.  Membership shows as
    constants that saturate; a constant growing by more than 10% between
    the last two levels is reported as a blow-up.
    """
    dirs = _direction_set()
    history = []
    for j in range(levels):
        span = 3 + 2 * j
        r = np.logspace(-span, span, 60 * span + 1)
        history.append(_class_constants(m, a, b, r, dirs))
    c0, c1 = history[-1]
    finite = np.isfinite(c0) and np.isfinite(c1)
    growth0 = history[-1][0] / history[-2][0] if finite else np.inf
    growth1 = history[-1][1] / history[-2][1] if finite else np.inf
    saturated = finite and growth0 < 1.1 and growth1 < 1.1
    return {
        "a": a,
        "b": b,
        "C0": c0,
        "C1": c1,
        "history": history,
        "growth": (float(growth0), float(growth1)),
        "pass": bool(saturated),
    }
