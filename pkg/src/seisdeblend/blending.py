"""Simultaneous-source blending and auxiliary noise injection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .survey import SurveyGeometry, TraceVolume


@dataclass(frozen=True)
class BlendSchedule:
    mean_delay: float
    jitter: float
    seed: int
    shot_times: tuple[float, ...] = field(default=())

    def sample_offsets(self, dt: float) -> np.ndarray:
        """Shot initiation times rounded to the nearest sample."""
        return np.rint(np.asarray(self.shot_times) / dt).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "mean_delay": self.mean_delay,
            "jitter": self.jitter,
            "seed": self.seed,
            "shot_times": list(self.shot_times),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlendSchedule":
        return cls(float(d["mean_delay"]), float(d["jitter"]), int(d["seed"]),
                   tuple(float(t) for t in d["shot_times"]))


@dataclass(frozen=True)
class ContinuousRecord:
    dt: float
    samples: np.ndarray  # [receiver, continuous time]
    schedule: BlendSchedule
    geometry: SurveyGeometry  # of the blended survey, for re-extraction


def draw_schedule(n_shots: int, mean_delay: float, jitter: float, seed: int) -> BlendSchedule:
    """Shot times with delays drawn from ``Uniform(mean_delay - jitter, mean_delay + jitter)``."""
    if n_shots < 1:
        raise ConfigError("n_shots must be >= 1")
    if not 0 <= jitter < mean_delay:
        raise ConfigError(f"need 0 <= jitter < mean_delay, got jitter={jitter}, mean_delay={mean_delay}")
    rng = np.random.default_rng(seed)
    delays = rng.uniform(mean_delay - jitter, mean_delay + jitter, size=n_shots - 1)
    times = np.concatenate([[0.0], np.cumsum(delays)])
    return BlendSchedule(mean_delay, jitter, seed, tuple(float(t) for t in times))


def draw_dataset_blend_params(
    seed: int,
    mean_delay_range: tuple[float, float] = (0.5, 1.5),
    jitter_range: tuple[float, float] = (0.1, 0.6),
) -> tuple[float, float]:
    """Per-dataset (mean_delay, jitter), redrawn until jitter < mean_delay."""
    rng = np.random.default_rng(seed)
    while True:
        mean_delay = float(rng.uniform(*mean_delay_range))
        jitter = float(rng.uniform(*jitter_range))
        if jitter < mean_delay:
            return mean_delay, jitter


def blend(volume: TraceVolume, schedule: BlendSchedule) -> ContinuousRecord:
    """Sum all shot records onto one continuous recording per receiver channel."""
    g = volume.geometry
    if len(schedule.shot_times) != g.n_shots:
        raise ShapeError(
            f"schedule has {len(schedule.shot_times)} shots, volume has {g.n_shots}"
        )
    starts = schedule.sample_offsets(g.dt)
    record = np.zeros((g.n_receivers, int(starts[-1]) + g.n_time), dtype=volume.samples.dtype)
    for s, t0 in enumerate(starts):
        record[:, t0:t0 + g.n_time] += volume.samples[s]
    return ContinuousRecord(g.dt, record, schedule, g)


def extract_blended(record: ContinuousRecord, nt: int | None = None) -> TraceVolume:
    """Cut one window per shot, starting at its initiation time, out of the continuous record."""
    g = record.geometry
    nt = g.n_time if nt is None else int(nt)
    starts = record.schedule.sample_offsets(record.dt)
    length = record.samples.shape[1]
    if int(starts[-1]) + nt > length:
        raise IndexError(
            f"window of {nt} samples for shot {len(starts) - 1} exceeds record length {length}"
        )
    out = np.stack([record.samples[:, t0:t0 + nt] for t0 in starts])
    geometry = g if nt == g.n_time else SurveyGeometry(
        g.n_shots, g.n_receivers, nt, g.dt, g.shot_spacing, g.receiver_spacing, g.near_offset, g.towed
    )
    return TraceVolume(geometry, out)


def blend_volume(volume: TraceVolume, schedule: BlendSchedule) -> TraceVolume:
    """Shorthand for ``extract_blended(blend(volume, schedule))``."""
    return extract_blended(blend(volume, schedule))


def add_white_noise(volume: TraceVolume, sigma_rel: float, seed: int) -> TraceVolume:
    if sigma_rel < 0:
        raise ConfigError("sigma_rel must be >= 0")
    if sigma_rel == 0:
        return volume
    rng = np.random.default_rng(seed)
    sigma = sigma_rel * float(np.std(volume.samples))
    noise = rng.normal(0.0, sigma, size=volume.samples.shape)
    return volume.with_samples(volume.samples + noise.astype(volume.samples.dtype))


def shifted_interference(other: TraceVolume, n_shots: int, seed: int) -> np.ndarray:
    """Per-shot circularly time-rotated copies of ``other``'s records."""
    rng = np.random.default_rng(seed)
    n_other = other.geometry.n_shots
    shots = rng.integers(0, n_other, size=n_shots) if n_shots != n_other else np.arange(n_shots)
    shifts = rng.integers(0, other.geometry.n_time, size=n_shots)
    return np.stack([np.roll(other.samples[s], sh, axis=-1) for s, sh in zip(shots, shifts)])


def inject_interference(
    volume: TraceVolume, other: TraceVolume, gain: float, time_shift_seed: int | None
) -> TraceVolume:
    """Add gain-scaled records of another survey, each rotated by a random time shift.

    ``time_shift_seed=None`` applies no shift (shot ``s`` of ``other`` onto shot ``s``).
    """
    g, o = volume.geometry, other.geometry
    if (g.n_receivers, g.n_time) != (o.n_receivers, o.n_time):
        raise ShapeError(
            f"interference shape {(o.n_receivers, o.n_time)} != {(g.n_receivers, g.n_time)}"
        )
    if gain < 0:
        raise ConfigError("gain must be >= 0")
    if gain == 0:
        return volume
    if time_shift_seed is None:
        if o.n_shots != g.n_shots:
            raise ShapeError("unshifted interference needs equal shot counts")
        extra = other.samples
    else:
        extra = shifted_interference(other, g.n_shots, time_shift_seed)
    return volume.with_samples(volume.samples + gain * extra)
