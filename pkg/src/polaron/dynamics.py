"""Time integration of the particle-field system in diagonalized variables.

State (X, P, B) evolves by

    X' = P / M,    P' = int grad W(x - X) (U Re B)(x) dx,    i B' = H B + W(. - X),

with ``H = |xi| sqrt(|xi|^2 + mu)`` and ``U = |xi| / sqrt(|xi|^2 + mu)``.
Everything is carried in spectral form; pairings use discrete Parseval, so a
step needs no FFT at all.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .potentials import PotentialSpec, potential_hat, weighted_norm
from .spectral import (
    ComplexField,
    FourierGrid3,
    ifft3,
    imag_part_hat,
    physical_field,
    real_part_hat,
    spectral_field,
)
from .traveling_wave import h_v_grid

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e3


class NumericalGuardError(RuntimeError):
    """Raised when a run leaves the regime the integrator is valid in."""


@dataclass(frozen=True)
class SystemParams:
    mass: float = 1.0
    mu: float = 1.0


@dataclass(eq=False)
class SystemState:
    t: float
    X: np.ndarray
    P: np.ndarray
    B: ComplexField
    force: Optional[np.ndarray] = None
    midpoint: Optional[np.ndarray] = None  # velocity of the step that produced this state
    midpoint_dt: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.t, self.X.copy(), self.P.copy(), spectral_field(self.B.grid, self.B.data.copy()),
                           None if self.force is None else self.force.copy(),
                           None if self.midpoint is None else self.midpoint.copy(), self.midpoint_dt)


@dataclass(frozen=True)
class PerturbationSpec:
    """Complex Gaussian bump  eps * exp(i phase) * exp(-|x - offset|^2 / (2 width^2))."""

    amplitude: float = 0.01
    width: float = 1.0
    offset: tuple = (0.0, 0.0, 0.0)
    phase: float = math.pi / 4

    def field(self, grid: FourierGrid3) -> ComplexField:
        c = grid.coordinates
        x1, x2, x3 = grid.axes(c)
        o = self.offset
        # minimal-image displacement from the bump centre
        d = [((xa - oa + grid.L / 2) % grid.L) - grid.L / 2 for xa, oa in zip((x1, x2, x3), o)]
        r2 = d[0] ** 2 + d[1] ** 2 + d[2] ** 2
        data = self.amplitude * np.exp(1j * self.phase) * np.exp(-0.5 * r2 / self.width**2)
        return physical_field(grid, data)


class CoupledSystem:
    """Grid, coupling and parameters, with the spectral tables a step needs."""

    def __init__(self, grid: FourierGrid3, spec: PotentialSpec, params: SystemParams = SystemParams()):
        self.grid = grid
        self.spec = spec
        self.params = params
        mu = params.mu
        r = grid.xi_norm
        self.h = r * np.sqrt(r**2 + mu)
        self.u = r / np.sqrt(r**2 + mu)
        w = potential_hat(spec, grid)
        w[0, 0, 0] = 0.0  # mean-zero gauge: the zero mode never couples
        self.w_hat = w
        self.k_odd = grid.axes(grid.odd_wavenumbers)
        self.uw = self.u * w
        self.self_weight = self.u * w.real**2
        self._dt_cache = {}
        self.w_l2 = float(np.sqrt(np.sum(np.abs(w) ** 2) / grid.L**3))

    # -- basic pairings ---------------------------------------------------

    def beta_hat(self, B_hat: np.ndarray) -> np.ndarray:
        g = self.grid
        return self.u * real_part_hat(g, B_hat) + 1j * imag_part_hat(g, B_hat)

    def B_from_beta(self, beta: ComplexField) -> np.ndarray:
        g = self.grid
        bh = beta.spectral()
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(self.u > 0, 1.0 / self.u, 0.0)
        out = inv * real_part_hat(g, bh) + 1j * imag_part_hat(g, bh)
        out[0, 0, 0] = 0.0
        return out

    def _coupled(self, X, B_hat: np.ndarray) -> np.ndarray:
        """u W_hat conj(phase_X) B_hat: the integrand shared by every force pairing."""
        return self.uw * np.conj(self.grid.translation_phase(X)) * B_hat

    def _pair(self, arr: np.ndarray) -> np.ndarray:
        """(sum_xi xi_j arr) / L^3 for j = 1..3, via marginal sums."""
        g = self.grid
        k = g.odd_wavenumbers
        plane = arr.sum(axis=2)
        return np.array([
            plane.sum(axis=1) @ k,
            plane.sum(axis=0) @ k,
            arr.sum(axis=(0, 1)) @ k,
        ]) / g.L**3

    def force(self, X, B_hat: np.ndarray) -> np.ndarray:
        """int grad W(x - X) (U Re B)(x) dx.

        U grad W(. - X) is real, so pairing it with Re B equals the real part
        of pairing it with B.
        """
        return (-1j * self._pair(self._coupled(X, B_hat))).real

    def energy(self, state: SystemState) -> float:
        """|P|^2/2M + int [ |grad beta|^2/2 + mu (Re beta)^2/2 + W(. - X) Re beta ]."""
        g = self.grid
        bh = self.beta_hat(state.B.data)
        a = real_part_hat(g, bh)
        field_e = np.sum(0.5 * g.xi_norm**2 * np.abs(bh) ** 2 + 0.5 * self.params.mu * np.abs(a) ** 2)
        coupling = np.sum(np.conj(self.w_hat * g.translation_phase(state.X)) * a).real
        kinetic = 0.5 * float(state.P @ state.P) / self.params.mass
        return kinetic + float(field_e.real + coupling) / g.L**3

    def total_momentum(self, state: SystemState) -> np.ndarray:
        """P + int Re beta grad Im beta."""
        g = self.grid
        bh = self.beta_hat(state.B.data)
        a = real_part_hat(g, bh)
        b = imag_part_hat(g, bh)
        field_p = np.array([np.sum(np.conj(a) * 1j * k * b).real for k in self.k_odd]) / g.L**3
        return state.P + field_p

    # -- stepping ---------------------------------------------------------

    def _tables(self, dt: float):
        tab = self._dt_cache.get(dt)
        if tab is None:
            tab = (np.exp(-1j * dt * self.h), np.exp(-0.5j * dt * self.h), dt * self.h)
            self._dt_cache = {dt: tab}
        return tab

    def source_increment(self, X, V, dt: float) -> np.ndarray:
        """-i int_0^dt exp(-i H (dt - s)) W(. - X - s V) ds, exactly in Fourier space."""
        g = self.grid
        _, half, hdt = self._tables(dt)
        kv = V[0] * self.k_odd[0] + V[1] * self.k_odd[1] + V[2] * self.k_odd[2]
        drift = g.axes_of([np.exp(-0.5j * dt * V[a] * g.odd_wavenumbers) for a in range(3)])
        phase = g.translation_phase(X) * (drift[0] * drift[1] * drift[2])
        return (-1j * dt) * self.w_hat * phase * half * np.sinc((hdt - dt * kv) / (2.0 * np.pi))

    def _path_kernel(self, V, dt: float):
        """z = (1/dt) int_0^dt exp(-i s h_V) ds and its squared modulus, with h_V = h - xi.V."""
        kv = V[0] * self.k_odd[0] + V[1] * self.k_odd[1] + V[2] * self.k_odd[2]
        half = 0.5 * dt * (self.h - kv)
        sn = np.sin(half)
        np.divide(sn, half, out=sn, where=half != 0)
        sn[half == 0] = 1.0
        z = np.empty(half.shape, dtype=complex)
        z.real = sn * np.cos(half)
        z.imag = -sn * sn * half
        return z, sn * sn

    def _impulse_from_kernel(self, c: np.ndarray, z: np.ndarray, sn2: np.ndarray, dt: float) -> np.ndarray:
        free = (-1j * dt * self._pair(c * z)).real
        react = -0.5 * dt**2 * self._pair(self.self_weight * sn2).real
        return free + react

    def impulse(self, c: np.ndarray, V, dt: float) -> np.ndarray:
        """int_0^dt force ds along the path X + sV, field started from B_n.

        ``c`` is ``_coupled(X, B_n)``.  The free part pairs c with
        int exp(-i s h_V) ds; the self part is the response to the source
        emitted during the step, -sum xi u W^2 (1 - cos(dt h_V)) / h_V^2.
        """
        z, sn2 = self._path_kernel(V, dt)
        return self._impulse_from_kernel(c, z, sn2, dt)

    def step(self, s: SystemState, dt: float, tol: float = 1e-10, max_iter: int = 30) -> SystemState:
        """One reversible second-order step.

        The particle moves on a straight segment with the midpoint velocity
        V = (P_n + P_{n+1}) / 2M; the field is advanced exactly along that
        segment and the momentum kick is the exact time integral of the
        force along it.  V is found by fixed-point iteration.  Kick and
        field response share one path, so total momentum is conserved to
        rounding and energy up to the iteration tolerance.

        The iteration contracts by roughly dt^2 per sweep, so the error left
        after stopping at ``tol`` is far below rounding.  When the previous
        midpoint velocity is known the start value is third-order accurate
        and two sweeps usually suffice.
        """
        if not 0 < abs(dt) <= 0.1:
            raise ValueError(f"time step must satisfy 0 < |dt| <= 0.1, got {dt}")
        m = self.params.mass
        c = self._coupled(s.X, s.B.data)
        f0 = s.force if s.force is not None else (-1j * self._pair(c)).real
        if s.midpoint is not None and s.midpoint_dt == dt:
            V = s.midpoint + dt * f0 / m
        else:
            V = (s.P + 0.5 * dt * f0) / m
        for _ in range(max_iter):
            z, sn2 = self._path_kernel(V, dt)
            kick = self._impulse_from_kernel(c, z, sn2, dt)
            V_new = (2.0 * s.P + kick) / (2.0 * m)
            if np.max(np.abs(V_new - V)) <= tol * max(1.0, np.max(np.abs(V_new))):
                break
            V = V_new
        else:
            log.warning("midpoint velocity iteration did not converge at t=%.4f", s.t)
        prop, _, _ = self._tables(dt)
        # the source emitted along the path is -i dt W_hat phase_X exp(-i dt h) conj(z)
        src = np.conj(z)
        src *= self.w_hat
        src *= self.grid.translation_phase(s.X)
        src *= -1j * dt
        src += s.B.data
        src *= prop
        src[0, 0, 0] = 0.0
        return SystemState(s.t + dt, s.X + dt * V, s.P + kick, spectral_field(self.grid, src), None, V, dt)

    # -- traveling waves --------------------------------------------------

    def profile_hat(self, v, X) -> np.ndarray:
        """Diagonalized traveling-wave profile for velocity v centred at X."""
        if self.params.mass != 1.0 or self.params.mu != 1.0:
            raise ValueError("traveling-wave profiles are built in normalized units (M = mu = 1)")
        hv = h_v_grid(self.grid, v)
        hv[0, 0, 0] = np.inf
        hv[np.abs(hv) < 1e-12] = np.inf
        return -self.w_hat / hv * self.grid.translation_phase(np.asarray(X, float))

    def delta_norms(self, state: SystemState) -> tuple:
        """Sup norms of Re and Im of beta - gamma_{v_t}(. - X_t)."""
        v = state.P / self.params.mass
        d_hat = self.beta_hat(state.B.data - self.profile_hat(v, state.X))
        d = ifft3(self.grid, d_hat)
        return float(np.max(np.abs(d.real))), float(np.max(np.abs(d.imag)))


# ----------------------------------------------------------------------------
# initial data
# ----------------------------------------------------------------------------


def init_state(model: CoupledSystem, X0, P0, beta0: Optional[ComplexField] = None) -> SystemState:
    """State from explicit field data beta0 (zero if omitted)."""
    X0 = np.asarray(X0, dtype=float)
    P0 = np.asarray(P0, dtype=float)
    if not (np.all(np.isfinite(X0)) and np.all(np.isfinite(P0))):
        raise ValueError("initial position and momentum must be finite")
    g = model.grid
    if beta0 is None:
        b = np.zeros(g.shape, dtype=complex)
    else:
        if not np.all(np.isfinite(beta0.data)):
            raise ValueError("initial field must be finite")
        b = model.B_from_beta(beta0)
    return SystemState(0.0, X0.copy(), P0.copy(), spectral_field(g, b))


def traveling_state(model: CoupledSystem, v0, perturbation: Optional[PerturbationSpec] = None, X0=(0.0, 0.0, 0.0)):
    """Traveling-wave data for v0 plus an optional perturbation.

    Returns the state and the weighted norm ||<x>^4 delta_0||_L2.
    """
    v0 = np.asarray(v0, dtype=float)
    X0 = np.asarray(X0, dtype=float)
    g = model.grid
    b = model.profile_hat(v0, X0)
    wn = 0.0
    if perturbation is not None and perturbation.amplitude != 0:
        delta = perturbation.field(g)
        wn = weighted_norm(delta, 4)
        b = b + model.B_from_beta(delta)
    b[0, 0, 0] = 0.0
    state = SystemState(0.0, X0.copy(), model.params.mass * v0, spectral_field(g, b))
    return state, wn


# ----------------------------------------------------------------------------
# integration
# ----------------------------------------------------------------------------


def wrap_horizon(grid: FourierGrid3, speed: float) -> float:
    """Time before radiation re-enters the interaction region."""
    return 0.4 * grid.L / max(1.0, speed + 1.0)


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray
    P: np.ndarray
    force: np.ndarray
    energy: np.ndarray
    momentum: np.ndarray
    field_norm: np.ndarray
    re_delta_linf: np.ndarray
    im_delta_linf: np.ndarray
    snapshots: list = field(default_factory=list)
    mass: float = 1.0

    @property
    def velocity(self) -> np.ndarray:
        return self.P / self.mass

    @property
    def acceleration(self) -> np.ndarray:
        return self.force / self.mass

    def __len__(self):
        return len(self.t)


def integrate(
    model: CoupledSystem,
    s0: SystemState,
    T: float,
    dt: float,
    sample_every: int = 1,
    snapshot_every: int = 0,
    track_delta: bool = False,
    enforce_horizon: bool = False,
    final_state: bool = False,
):
    """Integrate to time T, sampling diagnostics every ``sample_every`` steps.

    Runs past the wrap-around horizon are allowed (with a warning) unless
    ``enforce_horizon`` is set; conservation checks are unaffected by
    wrap-around, decay measurements are.
    """
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a whole number of steps of {dt}")
    horizon = wrap_horizon(model.grid, float(np.linalg.norm(s0.P)) / model.params.mass)
    if s0.t + T > horizon + 1e-12:
        if enforce_horizon:
            raise ValueError(f"T={T} exceeds the wrap-around horizon {horizon:.3f}")
        log.warning("integrating to %.3f beyond wrap-around horizon %.3f", s0.t + T, horizon)

    ref = max(s0.B.norm(), model.w_l2)
    rows = []
    snaps = []
    s = s0
    if s.force is None:
        s = replace(s, force=model.force(s.X, s.B.data))

    def record(st):
        if st.force is None:
            st.force = model.force(st.X, st.B.data)
        nrm = st.B.norm()
        if not np.isfinite(nrm) or nrm > BLOWUP_FACTOR * ref:
            raise NumericalGuardError(f"field norm {nrm:.3e} exceeds {BLOWUP_FACTOR:g} x initial scale at t={st.t:.3f}")
        red, imd = model.delta_norms(st) if track_delta else (np.nan, np.nan)
        rows.append((st.t, st.X.copy(), st.P.copy(), st.force.copy(), model.energy(st),
                     model.total_momentum(st), nrm, red, imd))

    record(s)
    for n in range(1, n_steps + 1):
        s = model.step(s, dt)
        if n % sample_every == 0 or n == n_steps:
            record(s)
        if snapshot_every and n % snapshot_every == 0:
            snaps.append((s.t, model.beta_hat(s.B.data)))
    traj = Trajectory(
        t=np.array([r[0] for r in rows]),
        X=np.array([r[1] for r in rows]),
        P=np.array([r[2] for r in rows]),
        force=np.array([r[3] for r in rows]),
        energy=np.array([r[4] for r in rows]),
        momentum=np.array([r[5] for r in rows]),
        field_norm=np.array([r[6] for r in rows]),
        re_delta_linf=np.array([r[7] for r in rows]),
        im_delta_linf=np.array([r[8] for r in rows]),
        snapshots=snaps,
        mass=model.params.mass,
    )
    return (traj, s) if final_state else traj


def relative_drift(series: np.ndarray) -> float:
    """max_t |q(t) - q(0)| / |q(0)| (vector series use Euclidean norms)."""
    series = np.asarray(series)
    if series.ndim == 1:
        return float(np.max(np.abs(series - series[0])) / abs(series[0]))
    return float(np.max(np.linalg.norm(series - series[0], axis=1)) / np.linalg.norm(series[0]))


# ----------------------------------------------------------------------------
# covariance under changes of units
# ----------------------------------------------------------------------------


def _scaled_spec(spec: PotentialSpec, amp: float, width: float) -> PotentialSpec:
    return PotentialSpec.gaussian(spec.amplitude * amp, spec.width * width)


def transformed_problem(model: CoupledSystem, s0: SystemState, lam: float, which: str):
    """The transformed system and initial state for transformation (d) or (e)."""
    g, p = model.grid, model.params
    b = s0.B.data
    if which == "d":
        m2 = CoupledSystem(g, _scaled_spec(model.spec, lam**-0.5, 1.0), SystemParams(p.mass / lam, p.mu))
        st = SystemState(0.0, s0.X.copy(), s0.P / lam, spectral_field(g, b * lam**-0.5))
        return m2, st, 1.0
    if which == "e":
        g2 = FourierGrid3(g.N, g.L * lam)
        m2 = CoupledSystem(g2, _scaled_spec(model.spec, lam**-3.5, lam), SystemParams(p.mass, p.mu / lam**2))
        # beta(x) -> lam^-3/2 beta(x / lam) scales spectral samples by lam^(3/2); U is unchanged
        st = SystemState(0.0, s0.X * lam, s0.P / lam, spectral_field(g2, b * lam**1.5))
        return m2, st, lam**2
    raise ValueError(f"unknown transformation {which!r}")


def scaling_covariance_check(model: CoupledSystem, s0: SystemState, lam: float, which: str, T: float = 5.0,
                             dt: float = 0.05) -> dict:
    """Compare a run with the image of the transformed run.

    The deviation is measured against the self-convergence error of the
    base run (dt versus dt/2).
    """
    if not 0.5 <= lam <= 2.0:
        raise ValueError("lambda must lie in [0.5, 2]")
    base = integrate(model, s0, T, dt)
    m2, st2, tscale = transformed_problem(model, s0, lam, which)
    other = integrate(m2, st2, T * tscale, dt * tscale)
    if which == "d":
        X_img, P_img = other.X, other.P * lam
    else:
        X_img, P_img = other.X / lam, other.P * lam
    dev = max(np.max(np.abs(X_img - base.X)), np.max(np.abs(P_img - base.P)))
    half = integrate(model, s0, T, dt / 2, sample_every=2)
    conv = max(np.max(np.abs(half.X - base.X)), np.max(np.abs(half.P - base.P)))
    return {
        "which": which,
        "lambda": lam,
        "deviation": float(dev),
        "self_convergence": float(conv),
        "pass": bool(dev <= 10.0 * conv),
    }


def self_convergence_order(model: CoupledSystem, s0: SystemState, T: float, dt: float) -> dict:
    """Observed order from errors at dt, dt/2, dt/4 (final X and P)."""
    ends = []
    for k in range(3):
        tr = integrate(model, s0, T, dt / 2**k, sample_every=10**9)
        ends.append(np.concatenate([tr.X[-1], tr.P[-1]]))
    e1 = np.linalg.norm(ends[0] - ends[1])
    e2 = np.linalg.norm(ends[1] - ends[2])
    return {"error_ratio": float(e1 / e2), "order": float(np.log2(e1 / e2)), "errors": [float(e1), float(e2)]}
