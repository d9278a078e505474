"""Power-law fits for spatial and temporal decay."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .spectral import ComplexField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    prefactor: float
    window: tuple
    goodness: float
    samples: int = 0

    @property
    def reliable(self) -> bool:
        return self.goodness >= 0.9

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "window": list(self.window),
            "goodness": self.goodness,
            "samples": self.samples,
        }


def fit_loglog(x, y, window=None, floor: float = 0.0) -> DecayFit:
    """Least-squares fit ``log y = log c + p log x`` over ``window`` in x.

    Samples with ``y <= floor`` are dropped (a quadrature noise floor, or
    exact zeros that have no logarithm).
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = np.isfinite(x) & np.isfinite(y) & (y > floor) & (x > 0)
    if window is not None:
        keep &= (x >= window[0]) & (x <= window[1])
    if keep.sum() < 3:
        raise ValueError(f"only {int(keep.sum())} usable samples in window {window}")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (icpt + slope * lx)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    w = tuple(window) if window is not None else (float(x[keep].min()), float(x[keep].max()))
    return DecayFit(float(slope), float(np.exp(icpt)), w, float(np.clip(r2, 0.0, 1.0)), int(keep.sum()))


def shell_maxima(values: np.ndarray, r: np.ndarray, window, width: float):
    """Maximum of |values| over spherical shells of the given width."""
    r0, r1 = window
    edges = np.arange(r0, r1 + 0.5 * width, width)
    flat_r = r.ravel()
    flat_v = np.abs(values).ravel()
    sel = (flat_r >= edges[0]) & (flat_r < edges[-1])
    idx = np.digitize(flat_r[sel], edges) - 1
    maxima = np.zeros(len(edges) - 1)
    np.maximum.at(maxima, idx, flat_v[sel])
    centres = 0.5 * (edges[:-1] + edges[1:])
    counts = np.bincount(idx, minlength=len(edges) - 1)
    good = counts > 0
    return centres[good], maxima[good]


def fit_spatial_decay(f: ComplexField, window=(3.0, 24.0), component: str = "abs") -> DecayFit:
    """Fit shell maxima of |f| against <r> on the radial window.

    ``component`` selects ``"re"``, ``"im"`` or ``"abs"`` of the physical
    samples.
    """
    g = f.grid
    r0, r1 = window
    if not (0 < r0 < r1 < g.L / 2):
        raise ValueError(f"window {window} must lie inside (0, L/2) for L={g.L}")
    data = f.physical()
    vals = {"re": data.real, "im": data.imag, "abs": np.abs(data)}[component]
    centres, maxima = shell_maxima(vals, g.r_norm, window, g.dx)
    fit = fit_loglog(np.sqrt(1.0 + centres**2), maxima)
    fit = DecayFit(fit.exponent, fit.prefactor, (r0, r1), fit.goodness, fit.samples)
    if not fit.reliable:
        log.warning("spatial decay fit on %s has goodness %.3f", window, fit.goodness)
    return fit


def fit_temporal_decay(t, values, window, floor: float = 0.0) -> DecayFit:
    """Fit ``values ~ c (1+t)^p`` on ``window``; needs at least 8 samples."""
    t = np.asarray(t, dtype=float)
    inside = (t >= window[0]) & (t <= window[1])
    if inside.sum() < 8:
        raise ValueError(f"need at least 8 samples in window {window}, got {int(inside.sum())}")
    fit = fit_loglog(1.0 + t[inside], np.asarray(values)[inside], floor=floor)
    fit = DecayFit(fit.exponent, fit.prefactor, tuple(window), fit.goodness, fit.samples)
    if not fit.reliable:
        log.warning("temporal decay fit on %s has goodness %.3f", window, fit.goodness)
    return fit
