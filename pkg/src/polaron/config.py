"""Experiment configuration: one JSON document, validated before any compute."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

KINDS = ("travel", "simulate", "stability", "kernel", "dispersive", "supersonic", "sweep")


class ConfigError(ValueError):
    """A configuration that would violate a precondition of the requested run."""


@dataclass(frozen=True)
class GridConfig:
    N: int = 64
    L: float = 32.0


@dataclass(frozen=True)
class PotentialConfig:
    kind: str = "gaussian"
    amplitude: float = 1.0
    width: float = 1.0
    radii: Optional[list] = None
    values: Optional[list] = None


@dataclass(frozen=True)
class PerturbationConfig:
    """Complex Gaussian bump; ``kind = "random"`` multiplies it by smooth seeded noise."""

    epsilon: float = 0.01
    width: float = 1.0
    offset: tuple = (0.0, 0.0, 0.0)
    phase: float = math.pi / 4
    kind: str = "bump"


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.05
    T: Optional[float] = 20.0  # None: run to the wrap-around horizon
    sample_every: int = 1
    snapshot_every: int = 0


@dataclass(frozen=True)
class KernelConfig:
    dt: float = 0.05
    t_max: float = 60.0
    r_max: float = 6.0
    panel: float = 0.05
    order: int = 16
    n_polar: int = 64
    n_azimuth: int = 16
    fit_window: tuple = (5.0, 40.0)
    check_omegas: tuple = (0.1, 1.0, 5.0)
    certificate_omegas: tuple = tuple(float(w) for w in np.linspace(-20.0, 20.0, 81))
    pad_factor: int = 16
    convergence_check: bool = True


@dataclass(frozen=True)
class DispersiveConfig:
    band: int = 0
    sigmas: tuple = (0.0, 1.0)
    t_min: float = 1.0
    t_max: float = 12.0
    samples: int = 23
    oscillatory_window: tuple = (5.0, 50.0)
    oscillatory_l: int = 1


@dataclass(frozen=True)
class SupersonicConfig:
    resolutions: tuple = (32, 48, 64, 96)
    spacing: float = 0.5
    control_velocity: tuple = (0.0, 0.0, 0.5)


@dataclass(frozen=True)
class UnitsConfig:
    """Physical mass and squared sound speed, plus an optional extra length scale.

    Runs are carried out in normalized units: a length rescaling with
    factor sqrt(mu) sends mu to 1, then a mass rescaling with factor M sends
    M to 1.  ``scale`` applies one more length rescaling afterwards.
    """

    mass: float = 1.0
    mu: float = 1.0
    scale: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    grid: GridConfig = GridConfig()
    potential: PotentialConfig = PotentialConfig()
    velocity: tuple = (0.0, 0.0, 0.5)
    perturbation: PerturbationConfig = PerturbationConfig()
    integrator: IntegratorConfig = IntegratorConfig()
    kernel: KernelConfig = KernelConfig()
    dispersive: DispersiveConfig = DispersiveConfig()
    supersonic: SupersonicConfig = SupersonicConfig()
    units: UnitsConfig = UnitsConfig()
    spatial_window: tuple = (3.0, 24.0)
    control_run: bool = True
    sweep: tuple = ()
    output: Optional[str] = None
    seed: int = 0

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


_SECTIONS = {
    "grid": GridConfig,
    "potential": PotentialConfig,
    "perturbation": PerturbationConfig,
    "integrator": IntegratorConfig,
    "kernel": KernelConfig,
    "dispersive": DispersiveConfig,
    "supersonic": SupersonicConfig,
    "units": UnitsConfig,
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list) and key not in ("radii", "values"):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict, kind: Optional[str] = None) -> ExperimentConfig:
    """Build and validate a config; ``kind`` overrides any kind in ``data``."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    if kind is not None:
        data = {**data, "kind": kind}
    if "kind" not in data:
        raise ConfigError("configuration needs a 'kind'")
    kwargs = {}
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key == "sweep":
            if not isinstance(value, list) or not all(isinstance(v, dict) for v in value):
                raise ConfigError("sweep must be a list of override objects")
            kwargs[key] = tuple(value)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        cfg = ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def load(path, kind: Optional[str] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return from_dict(data, kind)


def merge(base: dict, override: dict) -> dict:
    """Recursive dict update used by sweeps."""
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


# ----------------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------------


def _finite(x, what):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} must be finite")
    return arr


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def wrap_time(L: float, speed: float) -> float:
    return 0.4 * L / max(1.0, speed + 1.0)


def validate(cfg: ExperimentConfig) -> None:
    """Check every precondition the requested kind relies on."""
    _require(cfg.kind in KINDS, f"kind must be one of {KINDS}, got {cfg.kind!r}")
    g = cfg.grid
    _require(isinstance(g.N, int) and g.N >= 8 and g.N % 2 == 0, f"grid.N must be an even integer >= 8, got {g.N}")
    _require(float(g.L) > 0 and math.isfinite(g.L), f"grid.L must be positive, got {g.L}")
    _require(isinstance(cfg.seed, int) and 0 <= cfg.seed < 2**64, "seed must be an unsigned 64-bit integer")

    p = cfg.potential
    _require(p.kind in ("gaussian", "tabulated_radial"), f"unknown potential kind {p.kind!r}")
    if p.kind == "gaussian":
        _finite([p.amplitude, p.width], "potential amplitude and width")
        _require(p.width > 0, "potential width must be positive")
        _require(p.width <= g.L / 8, f"potential width {p.width} exceeds L/8 for L={g.L}")
    else:
        _require(p.radii is not None and p.values is not None, "tabulated potential needs radii and values")
        r = _finite(p.radii, "potential radii")
        _finite(p.values, "potential values")
        _require(r.ndim == 1 and len(r) == len(p.values) and np.all(np.diff(r) > 0),
                 "radii must increase and match values")

    v = _finite(cfg.velocity, "velocity")
    _require(v.shape == (3,), "velocity must have three components")
    speed = float(np.linalg.norm(v))

    u = cfg.units
    _finite([u.mass, u.mu, u.scale], "units")
    _require(u.mass > 0 and u.mu > 0 and u.scale > 0, "mass, mu and scale must be positive")

    it = cfg.integrator
    _require(0 < it.dt <= 0.1, f"integrator.dt must lie in (0, 0.1], got {it.dt}")
    _require(isinstance(it.sample_every, int) and it.sample_every >= 1, "sample_every must be a positive integer")
    _require(isinstance(it.snapshot_every, int) and it.snapshot_every >= 0, "snapshot_every must be >= 0")
    if it.T is not None:
        _require(it.T > 0, "integrator.T must be positive")
        steps = it.T / it.dt
        _require(abs(steps - round(steps)) < 1e-9 * max(1.0, steps), "integrator.T must be a whole number of steps")

    pert = cfg.perturbation
    _finite([pert.epsilon, pert.width, pert.phase, *pert.offset], "perturbation")
    _require(pert.epsilon >= 0 and pert.width > 0, "perturbation needs epsilon >= 0 and width > 0")
    _require(pert.kind in ("bump", "random"), f"unknown perturbation kind {pert.kind!r}")
    _require(len(pert.offset) == 3, "perturbation offset must have three components")

    if cfg.kind == "travel":
        _require(len(cfg.spatial_window) == 2 and 0 < cfg.spatial_window[0] < cfg.spatial_window[1] < g.L / 2,
                 f"spatial window must lie inside (0, L/2) for L={g.L}")
        _require(speed <= 1.0 + 1e-12, f"travel needs |v| <= 1 (profiles diverge above the sound speed), got {speed}")
    if cfg.kind in ("simulate", "stability"):
        _require(speed < 1.0, f"{cfg.kind} needs a subsonic initial velocity, got |v| = {speed}")
    if cfg.kind == "stability":
        horizon = wrap_time(g.L, speed)
        if it.T is not None:
            _require(it.T <= horizon + 1e-9, f"stability T={it.T} exceeds the wrap-around horizon {horizon:.3f}")
        _require(horizon > 2.0 + 10 * it.dt, "box too small: decay window [2, T_wrap] is empty")
    if cfg.kind == "kernel":
        k = cfg.kernel
        _require(speed < 1.0, "kernel needs a subsonic velocity")
        _require(k.dt > 0 and k.t_max > k.dt, "kernel needs dt > 0 and t_max > dt")
        _require(k.r_max > 0 and k.panel > 0 and k.order >= 2 and k.n_polar >= 2 and k.n_azimuth >= 3,
                 "invalid kernel quadrature settings")
        _require(k.fit_window[0] < k.fit_window[1] <= k.t_max, "kernel fit window must lie inside [0, t_max]")
        _require(all(math.isfinite(w) for w in k.certificate_omegas + k.check_omegas), "frequencies must be finite")
        _require(k.pad_factor >= 2, "pad_factor must be at least 2")
    if cfg.kind == "dispersive":
        d = cfg.dispersive
        from .spectral import FourierGrid3, resolvable_bands

        bands = resolvable_bands(FourierGrid3(g.N, float(g.L)))
        _require(d.band in bands, f"band {d.band} not resolvable on N={g.N}, L={g.L} (resolvable: {list(bands)})")
        _require(all(0.0 <= s <= 1.0 for s in d.sigmas), "sigmas must lie in [0, 1]")
        _require(0 < d.t_min < d.t_max <= wrap_time(g.L, 0.0), "dispersive times must lie in (0, T_wrap]")
        _require(d.samples >= 8, "need at least 8 time samples")
        _require(speed < 1.0, "oscillatory integrals need a subsonic velocity")
    if cfg.kind == "supersonic":
        s = cfg.supersonic
        _require(speed > 1.0, f"supersonic scan needs |v| > 1, got {speed}")
        _require(len(s.resolutions) >= 2 and all(int(n) == n and n % 2 == 0 and n >= 8 for n in s.resolutions),
                 "resolutions must be even integers >= 8")
        _require(s.spacing > 0, "spacing must be positive")
        _require(float(np.linalg.norm(s.control_velocity)) < 1.0, "control velocity must be subsonic")
    if cfg.kind == "sweep":
        _require(len(cfg.sweep) > 0, "sweep needs at least one override")
        base = {k: v for k, v in cfg.to_dict().items() if k not in ("sweep", "kind")}
        for i, ov in enumerate(cfg.sweep):
            _require("kind" in ov and ov["kind"] != "sweep", f"sweep entry {i} needs a non-sweep kind")
            try:
                from_dict(merge({**base, "sweep": []}, ov))
            except ConfigError as exc:
                raise ConfigError(f"sweep entry {i}: {exc}") from None


# ----------------------------------------------------------------------------
# units
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class UnitMap:
    """Factors taking normalized quantities back to the configured units."""

    length: float = 1.0
    time: float = 1.0
    momentum: float = 1.0
    mass: float = 1.0

    @property
    def velocity(self) -> float:
        return self.length / self.time


def _length_rescale(cfg: ExperimentConfig, lam: float) -> ExperimentConfig:
    """L -> lam L, W amplitude lam^-7/2, widths and offsets times lam, v / lam, times lam^2."""
    p, pert, it, g = cfg.potential, cfg.perturbation, cfg.integrator, cfg.grid
    if p.kind != "gaussian":
        raise ConfigError("unit rescaling is only supported for Gaussian potentials")
    return dataclasses.replace(
        cfg,
        grid=dataclasses.replace(g, L=g.L * lam),
        potential=dataclasses.replace(p, amplitude=p.amplitude * lam**-3.5, width=p.width * lam),
        velocity=tuple(x / lam for x in cfg.velocity),
        perturbation=dataclasses.replace(pert, epsilon=pert.epsilon * lam**-1.5, width=pert.width * lam,
                                         offset=tuple(x * lam for x in pert.offset)),
        integrator=dataclasses.replace(it, dt=it.dt * lam**2, T=None if it.T is None else it.T * lam**2),
        spatial_window=tuple(x * lam for x in cfg.spatial_window),
    )


def _mass_rescale(cfg: ExperimentConfig, lam: float) -> ExperimentConfig:
    """M -> M / lam with W and the field scaled by lam^-1/2."""
    p, pert = cfg.potential, cfg.perturbation
    return dataclasses.replace(
        cfg,
        potential=dataclasses.replace(p, amplitude=p.amplitude * lam**-0.5),
        perturbation=dataclasses.replace(pert, epsilon=pert.epsilon * lam**-0.5),
    )


def normalize(cfg: ExperimentConfig):
    """Config in units with M = mu = 1, and the map back to the configured units."""
    u = cfg.units
    if u.mass == 1.0 and u.mu == 1.0 and u.scale == 1.0:
        return cfg, UnitMap()
    lam_len = math.sqrt(u.mu) * u.scale
    out = _length_rescale(cfg, lam_len)
    out = _mass_rescale(out, u.mass)
    out = dataclasses.replace(out, units=UnitsConfig())
    # normalized lengths are lam_len times the configured ones, times lam_len^2
    back = UnitMap(length=1.0 / lam_len, time=1.0 / lam_len**2, momentum=lam_len * u.mass, mass=u.mass)
    return out, back
