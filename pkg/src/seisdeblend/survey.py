"""Survey geometry, trace volumes and gather-domain reindexing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError


@dataclass(frozen=True)
class SurveyGeometry:
    n_shots: int
    n_receivers: int
    n_time: int
    dt: float
    shot_spacing: float = 5.0
    receiver_spacing: float = 5.0
    near_offset: float = 0.0
    towed: bool = True

    def __post_init__(self):
        for name in ("n_shots", "n_receivers", "n_time"):
            if int(getattr(self, name)) < 1:
                raise GeometryError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.dt > 0:
            raise GeometryError(f"dt must be positive, got {self.dt}")
        if not (self.shot_spacing > 0 and self.receiver_spacing > 0):
            raise GeometryError("spacings must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_shots, self.n_receivers, self.n_time)

    @property
    def record_length(self) -> float:
        return self.n_time * self.dt

    def offsets(self) -> np.ndarray:
        """Source-receiver offset (m) of every receiver index."""
        return self.near_offset + np.arange(self.n_receivers) * self.receiver_spacing


@dataclass(frozen=True)
class TraceVolume:
    """Samples indexed ``[shot, receiver, time]`` together with their geometry."""

    geometry: SurveyGeometry
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.shape != self.geometry.shape:
            raise GeometryError(
                f"samples shape {s.shape} does not match geometry {self.geometry.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise ValueError("trace volume contains non-finite samples")
        object.__setattr__(self, "samples", s)

    def with_samples(self, samples: np.ndarray) -> "TraceVolume":
        return TraceVolume(self.geometry, samples)

    def __add__(self, other: "TraceVolume") -> "TraceVolume":
        return self.with_samples(self.samples + other.samples)

    def __sub__(self, other: "TraceVolume") -> "TraceVolume":
        return self.with_samples(self.samples - other.samples)


@dataclass(frozen=True)
class OffsetGather:
    offset_index: int
    samples: np.ndarray  # [shot, time]


@dataclass(frozen=True)
class ChannelStack:
    center_offset: int
    k: int
    neighbor_stride: int
    channels: np.ndarray  # [2k+1, shot, time]
    offset_indices: tuple[int, ...] = ()

    @property
    def center(self) -> np.ndarray:
        return self.channels[self.k]


def sort_common_offset(volume: TraceVolume, offset_index: int) -> OffsetGather:
    """Common-offset gather of a towed survey: one receiver index across all shots."""
    n_rec = volume.geometry.n_receivers
    if not 0 <= offset_index < n_rec:
        raise IndexError(f"offset_index {offset_index} outside [0, {n_rec})")
    return OffsetGather(offset_index, volume.samples[:, offset_index, :])


def channel_offsets(center: int, k: int, stride: int, n_receivers: int) -> list[int]:
    """Offset indices feeding each channel, clamped to the valid range."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return [min(max(center + (j - k) * stride, 0), n_receivers - 1) for j in range(2 * k + 1)]


def assemble_channel_stack(
    volume: TraceVolume, center: int, k: int, stride: int = 1
) -> ChannelStack:
    """Stack the centre common-offset gather with ``k`` neighbours on each side.

    Neighbours beyond the first or last offset replicate the edge gather.
    """
    n_rec = volume.geometry.n_receivers
    if not 0 <= center < n_rec:
        raise IndexError(f"center {center} outside [0, {n_rec})")
    idx = channel_offsets(center, k, stride, n_rec)
    channels = np.moveaxis(volume.samples[:, idx, :], 1, 0)
    return ChannelStack(center, k, stride, channels, tuple(idx))


def cmp_coordinates(
    shot_index: int, receiver_index: int, geometry: SurveyGeometry
) -> tuple[float, float]:
    """Midpoint and offset (m) of one trace; the source leads the streamer."""
    if not 0 <= shot_index < geometry.n_shots:
        raise IndexError(f"shot_index {shot_index} out of range")
    if not 0 <= receiver_index < geometry.n_receivers:
        raise IndexError(f"receiver_index {receiver_index} out of range")
    offset = geometry.near_offset + receiver_index * geometry.receiver_spacing
    shot_position = shot_index * geometry.shot_spacing
    return shot_position - offset / 2.0, offset
