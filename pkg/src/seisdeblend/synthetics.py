"""Random layered velocity models and 2D acoustic finite-difference shot modelling.

The propagator is second order in time and fourth order in space, with a
free surface at ``z = 0`` and a quadratic damping sponge on the sides and
bottom. Each shot is simulated on a window of the model that moves with the
source, so a laterally invariant medium yields identical shot records.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, GeometryError
from .survey import SurveyGeometry, TraceVolume


@dataclass(frozen=True)
class VelocityModel:
    dx: float
    wave_speed: np.ndarray  # [z, x], m/s

    def __post_init__(self):
        v = np.asarray(self.wave_speed)
        if v.ndim != 2:
            raise ConfigError("wave_speed must be 2D [z, x]")
        if not np.all(np.isfinite(v)) or v.min() <= 0:
            raise ConfigError("wave speeds must be finite and positive")
        if not self.dx > 0:
            raise ConfigError("dx must be positive")
        object.__setattr__(self, "wave_speed", v)

    @property
    def nz(self) -> int:
        return self.wave_speed.shape[0]

    @property
    def nx(self) -> int:
        return self.wave_speed.shape[1]

    @property
    def v_min(self) -> float:
        return float(self.wave_speed.min())

    @property
    def v_max(self) -> float:
        return float(self.wave_speed.max())


@dataclass(frozen=True)
class ModelGenParams:
    nx: int
    nz: int
    dx: float = 2.5
    n_layers: tuple[int, int] = (4, 10)
    speed_range: tuple[float, float] = (1500.0, 4000.0)
    interface_roughness: float = 20.0
    lateral_wavelength: float = 400.0
    lateral_gradient: float = 0.0  # max fractional speed change across the model
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_layers
        if lo < 2 or hi < lo:
            raise ConfigError(f"n_layers range must satisfy 2 <= min <= max, got {self.n_layers}")
        vmin, vmax = self.speed_range
        if not 0 < vmin <= vmax:
            raise ConfigError(f"invalid speed_range {self.speed_range}")
        if self.nx < 1 or self.nz < lo:
            raise ConfigError("model grid too small for the requested layers")
        if self.interface_roughness < 0 or self.lateral_wavelength <= 0:
            raise ConfigError("roughness must be >= 0 and lateral_wavelength > 0")
        if not 0 <= self.lateral_gradient < 1:
            raise ConfigError("lateral_gradient must lie in [0, 1)")


@dataclass(frozen=True)
class SimulationConfig:
    f_peak: float = 35.0
    dt: float | None = None  # propagator step; None picks the largest stable divisor of the record dt
    source_depth: float = 10.0
    receiver_depth: float = 10.0
    boundary_width: int = 40
    aperture: float = 100.0
    origin: float | None = None  # x of shot 0; None puts the far receiver of shot 0 at x = 0
    amplitude: float = 1.0
    cfl_factor: float = 0.5
    points_per_wavelength: float = 6.0
    reflection_coefficient: float = 1e-4

    @property
    def wavelet_delay(self) -> float:
        return 1.5 / self.f_peak


def _layer_interfaces(params: ModelGenParams, rng: np.random.Generator, n_layers: int):
    depth = params.nz * params.dx
    x = np.arange(params.nx) * params.dx
    tops = np.sort(rng.uniform(0.05 * depth, 0.95 * depth, size=n_layers - 1))
    surfaces = []
    for base in tops:
        shape = np.zeros_like(x)
        if params.interface_roughness > 0:
            for _ in range(3):
                wavelength = params.lateral_wavelength * rng.uniform(0.5, 2.0)
                shape += rng.uniform(-1, 1) * np.sin(2 * np.pi * x / wavelength + rng.uniform(0, 2 * np.pi))
            shape *= params.interface_roughness / max(np.abs(shape).max(), 1e-12)
        surfaces.append(base + shape)
    surfaces = np.maximum.accumulate(np.array(surfaces).reshape(n_layers - 1, params.nx), axis=0)
    return surfaces


def generate_velocity_model(params: ModelGenParams) -> VelocityModel:
    """Random layered model with undulating interfaces, deterministic in ``params.seed``.

    Layer speeds are drawn independently from ``speed_range`` (no increase with
    depth is imposed), giving stronger contrasts than typical real geology.
    """
    rng = np.random.default_rng(params.seed)
    n_layers = int(rng.integers(params.n_layers[0], params.n_layers[1] + 1))
    speeds = rng.uniform(*params.speed_range, size=n_layers)
    surfaces = _layer_interfaces(params, rng, n_layers)
    z = (np.arange(params.nz) * params.dx)[:, None]
    layer = (z >= surfaces[:, None, :]).sum(axis=0)
    field = speeds[layer]
    if params.lateral_gradient > 0:
        ramp = np.linspace(-1.0, 1.0, params.nx) * params.lateral_gradient * rng.uniform(-1, 1)
        field = field * (1.0 + ramp)[None, :]
    field = np.clip(field, *params.speed_range).astype(np.float32)
    return VelocityModel(params.dx, field)


def ricker(t, f_peak: float):
    """Zero-phase Ricker wavelet ``(1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2)``."""
    if not f_peak > 0:
        raise ConfigError("f_peak must be positive")
    a = (np.pi * f_peak * np.asarray(t, dtype=np.float64)) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def stable_dt(model: VelocityModel, record_dt: float, config: SimulationConfig) -> float:
    """Propagator step: ``config.dt`` if given, else the largest CFL-safe divisor of ``record_dt``."""
    bound = config.cfl_factor * model.dx / model.v_max
    if config.dt is not None:
        dt = float(config.dt)
        if dt > bound * (1 + 1e-12):
            raise ConfigError(f"dt={dt:g} violates CFL bound {bound:g} (cfl_factor={config.cfl_factor})")
    else:
        dt = record_dt / math.ceil(record_dt / bound - 1e-9)
    n_sub = record_dt / dt
    if abs(n_sub - round(n_sub)) > 1e-6:
        raise ConfigError(f"record dt {record_dt:g} is not an integer multiple of propagator dt {dt:g}")
    return dt


def check_config(model: VelocityModel, geometry: SurveyGeometry, config: SimulationConfig) -> float:
    dt = stable_dt(model, geometry.dt, config)
    f_max = 2.5 * config.f_peak
    if model.dx > model.v_min / (config.points_per_wavelength * f_max) * (1 + 1e-12):
        raise ConfigError(
            f"dx={model.dx:g} under-samples f_max={f_max:g} Hz at v_min={model.v_min:g} "
            f"({config.points_per_wavelength:g} points per wavelength required)"
        )
    if config.boundary_width < 2:
        raise ConfigError("boundary_width must be >= 2 cells")
    return dt


def source_positions(geometry: SurveyGeometry, config: SimulationConfig) -> np.ndarray:
    far = geometry.near_offset + (geometry.n_receivers - 1) * geometry.receiver_spacing
    origin = far if config.origin is None else config.origin
    return origin + np.arange(geometry.n_shots) * geometry.shot_spacing


def _node(pos: float, dx: float) -> int:
    return int(round(pos / dx))


@numba.njit(cache=True, nogil=True)
def _propagate(c2, damp, src_iz, src_ix, wavelet, rec_iz, rec_ix, n_sub, nt):
    nz, nx = c2.shape
    prev = np.zeros((nz, nx))
    cur = np.zeros((nz, nx))
    nxt = np.zeros((nz, nx))
    rec = np.zeros((rec_ix.shape[0], nt))
    a0, a1, a2 = -2.5, 4.0 / 3.0, -1.0 / 12.0
    step = 0
    for it in range(nt):
        for r in range(rec_ix.shape[0]):
            rec[r, it] = cur[rec_iz, rec_ix[r]]
        if it == nt - 1:
            break
        for _ in range(n_sub):
            for iz in range(1, nz - 2):
                for ix in range(2, nx - 2):
                    # antisymmetric image across the free surface at iz = 0
                    up2 = -cur[1, ix] if iz == 1 else cur[iz - 2, ix]
                    lap = (
                        2.0 * a0 * cur[iz, ix]
                        + a1 * (cur[iz - 1, ix] + cur[iz + 1, ix] + cur[iz, ix - 1] + cur[iz, ix + 1])
                        + a2 * (up2 + cur[iz + 2, ix] + cur[iz, ix - 2] + cur[iz, ix + 2])
                    )
                    nxt[iz, ix] = (2.0 * cur[iz, ix] - prev[iz, ix] + c2[iz, ix] * lap) * damp[iz, ix]
            nxt[src_iz, src_ix] += c2[src_iz, src_ix] * wavelet[step]
            for iz in range(nz):
                for ix in range(nx):
                    cur[iz, ix] *= damp[iz, ix]
            prev, cur, nxt = cur, nxt, prev
            step += 1
    return rec


def _damping(nz: int, nx: int, bw: int, sigma_max: float, dt: float) -> np.ndarray:
    d = np.arange(bw, 0, -1) / bw
    prof_x = np.zeros(nx)
    prof_x[:bw] = d
    prof_x[nx - bw:] = d[::-1]
    prof_z = np.zeros(nz)
    prof_z[nz - bw:] = d[::-1]
    dist = np.maximum(prof_z[:, None], prof_x[None, :])
    return np.exp(-sigma_max * dist**2 * dt)


def simulate_shot(
    model: VelocityModel, shot_index: int, geometry: SurveyGeometry, config: SimulationConfig
) -> np.ndarray:
    """Pressure record ``[receiver, time]`` for one shot of a towed survey."""
    dt = check_config(model, geometry, config)
    if not 0 <= shot_index < geometry.n_shots:
        raise GeometryError(f"shot_index {shot_index} out of range")
    dx = model.dx
    x_src = float(source_positions(geometry, config)[shot_index])
    x_rec = x_src - geometry.offsets()
    x_extent = (model.nx - 1) * dx
    for x in (x_src, x_rec.min(), x_rec.max()):
        if x < -1e-9 or x > x_extent + 1e-9:
            raise GeometryError(f"position x={x:g} m outside model [0, {x_extent:g}]")
    z_extent = (model.nz - 1) * dx
    for z in (config.source_depth, config.receiver_depth):
        if z < dx - 1e-9 or z > z_extent + 1e-9:
            raise GeometryError(f"depth {z:g} m outside model interior [{dx:g}, {z_extent:g}]")

    bw = config.boundary_width
    far = geometry.near_offset + (geometry.n_receivers - 1) * geometry.receiver_spacing
    i_src = _node(x_src, dx)
    i_lo = i_src - _node(far + config.aperture, dx)
    i_hi = i_src + _node(config.aperture, dx)
    cols = np.clip(np.arange(i_lo - bw, i_hi + bw + 1), 0, model.nx - 1)
    v = model.wave_speed.astype(np.float64)[:, cols]
    v = np.concatenate([v, np.repeat(v[-1:], bw, axis=0)], axis=0)
    nz, nx = v.shape

    c2 = (v * dt / dx) ** 2
    sigma_max = 3.0 * float(v.max()) * math.log(1.0 / config.reflection_coefficient) / (2.0 * bw * dx)
    damp = _damping(nz, nx, bw, sigma_max, dt)
    n_sub = int(round(geometry.dt / dt))
    n_steps = (geometry.n_time - 1) * n_sub
    t = np.arange(max(n_steps, 1)) * dt
    wavelet = config.amplitude * ricker(t - config.wavelet_delay, config.f_peak)
    rec_ix = np.array([_node(x, dx) - i_lo + bw for x in x_rec], dtype=np.int64)
    src_ix = i_src - i_lo + bw
    return _propagate(
        c2, damp, _node(config.source_depth, dx), src_ix, wavelet,
        _node(config.receiver_depth, dx), rec_ix, n_sub, geometry.n_time,
    )


def simulate_survey(
    model: VelocityModel, geometry: SurveyGeometry, config: SimulationConfig, n_jobs: int = 1
) -> TraceVolume:
    """Simulate every shot independently and collect them into a volume."""
    if geometry.n_shots < 1:
        raise ConfigError("survey has no shots")
    check_config(model, geometry, config)

    def one(s):
        return simulate_shot(model, s, geometry, config)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            records = list(pool.map(one, range(geometry.n_shots)))
    else:
        records = [one(s) for s in range(geometry.n_shots)]
    return TraceVolume(geometry, np.stack(records))
