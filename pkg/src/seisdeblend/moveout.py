"""NMO correction, velocity profiles and CMP stacking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .survey import TraceVolume, cmp_coordinates


@dataclass(frozen=True)
class VelocityProfile:
    """Piecewise-linear v(t0) with constant extrapolation outside the knots."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.knots:
            raise ConfigError("velocity profile needs at least one knot")
        t = [k[0] for k in self.knots]
        if any(b < a for a, b in zip(t, t[1:])):
            raise ConfigError("profile knots must be sorted by t0")
        if any(v <= 0 for _, v in self.knots):
            raise ConfigError("profile velocities must be positive")

    @classmethod
    def parse(cls, text: str) -> "VelocityProfile":
        """From ``"t0:v,t0:v,..."``."""
        knots = []
        for item in text.split(","):
            t0, v = item.split(":")
            knots.append((float(t0), float(v)))
        return cls(tuple(knots))

    def __str__(self) -> str:
        return ",".join(f"{t:g}:{v:g}" for t, v in self.knots)


# Constant 1500 m/s to 0.5 s, linear to 2000 m/s at 2 s, constant after.
DEFAULT_PROFILE = VelocityProfile(((0.5, 1500.0), (2.0, 2000.0)))


def profile_velocity(profile: VelocityProfile, t0):
    t, v = np.array(profile.knots, dtype=np.float64).T
    return np.interp(t0, t, v)


@dataclass(frozen=True)
class CmpGather:
    midpoint_bin: int
    offsets: np.ndarray  # [trace], m
    traces: np.ndarray  # [trace, time]
    dt: float
    live: np.ndarray | None = None  # [trace, time] mask; None means every sample is live

    def __post_init__(self):
        if np.any(np.asarray(self.offsets) < 0):
            raise ShapeError("offsets must be >= 0")
        if np.shape(self.traces)[0] != np.shape(self.offsets)[0]:
            raise ShapeError("one offset per trace required")


def nmo_times(t0: np.ndarray, offset: float, profile: VelocityProfile) -> np.ndarray:
    v = profile_velocity(profile, t0)
    return np.sqrt(t0**2 + (offset / v) ** 2)


def nmo_correct(gather: CmpGather, profile: VelocityProfile) -> CmpGather:
    """Flatten hyperbolic moveout; linear interpolation in time, zero beyond the trace."""
    traces = np.asarray(gather.traces)
    nt = traces.shape[1]
    t0 = np.arange(nt) * gather.dt
    out = np.zeros_like(traces, dtype=np.float64)
    live = np.zeros(traces.shape, dtype=bool)
    for i, x in enumerate(gather.offsets):
        pos = nmo_times(t0, float(x), profile) / gather.dt
        out[i] = np.interp(pos, np.arange(nt), traces[i], right=0.0)
        live[i] = pos <= nt - 1
    if gather.live is not None:
        live &= gather.live
    return CmpGather(gather.midpoint_bin, gather.offsets, out, gather.dt, live)


def stack(gathers: list[CmpGather]) -> np.ndarray:
    """Mean over live traces per sample; samples with no live trace stay zero."""
    if not gathers:
        return np.zeros((0, 0))
    nt = {np.shape(g.traces)[1] for g in gathers}
    if len(nt) != 1:
        raise ShapeError(f"gathers disagree on n_time: {sorted(nt)}")
    out = np.zeros((len(gathers), nt.pop()))
    for i, g in enumerate(gathers):
        tr = np.asarray(g.traces, dtype=np.float64)
        live = np.ones(tr.shape, dtype=bool) if g.live is None else g.live
        fold = live.sum(axis=0)
        total = np.where(live, tr, 0.0).sum(axis=0)
        out[i] = np.where(fold > 0, total / np.maximum(fold, 1), 0.0)
    return out


def sort_cmp(volume: TraceVolume) -> list[CmpGather]:
    """Bin traces by midpoint with bin width ``receiver_spacing / 2``."""
    g = volume.geometry
    width = g.receiver_spacing / 2.0
    mids = np.empty((g.n_shots, g.n_receivers))
    offs = np.empty(g.n_receivers)
    for s in range(g.n_shots):
        for r in range(g.n_receivers):
            mids[s, r], offs[r] = cmp_coordinates(s, r, g)
    bins = np.rint((mids - mids.min()) / width).astype(np.int64)
    gathers = []
    for b in range(int(bins.max()) + 1):
        s_idx, r_idx = np.nonzero(bins == b)
        if s_idx.size == 0:
            continue
        gathers.append(CmpGather(b, offs[r_idx], volume.samples[s_idx, r_idx, :], g.dt))
    return gathers


def stack_volume(volume: TraceVolume, profile: VelocityProfile = DEFAULT_PROFILE) -> np.ndarray:
    """CMP stack image ``[midpoint bin, time]``."""
    return stack([nmo_correct(g, profile) for g in sort_cmp(volume)])
