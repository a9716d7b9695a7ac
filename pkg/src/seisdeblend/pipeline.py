"""Training-sample construction: normalisation, patch sampling and augmentation.

Inputs are noisy channel stacks, targets are the noise in the centre gather
(noisy minus clean). Every random draw is keyed on
``(epoch_seed, dataset, offset)`` so samples can be built in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ConfigError, DegenerateInputError, SizeError
from .survey import ChannelStack, TraceVolume, assemble_channel_stack


@dataclass(frozen=True)
class TrainingSample:
    input: np.ndarray  # [channel, patch_h, patch_w] (shot, time)
    target: np.ndarray  # [patch_h, patch_w]
    scale: float
    dataset: int = -1
    offset: int = -1
    corner: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class AugmentConfig:
    time_kernel_len: tuple[int, ...] = (3, 5, 7)
    time_stride: tuple[int, int] = (1, 5)
    neighbor_stride: tuple[int, int] = (1, 4)
    patch: int = 224
    kernel_prob: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.patch < 1:
            raise ConfigError("patch must be >= 1")
        if any(n < 1 or n % 2 == 0 for n in self.time_kernel_len):
            raise ConfigError("time kernel lengths must be odd and >= 1")
        lo, hi = self.time_stride
        if not 1 <= lo <= hi <= 5:
            raise ConfigError("time_stride range must lie within [1, 5]")
        lo, hi = self.neighbor_stride
        if not 1 <= lo <= hi <= 4:
            raise ConfigError("neighbor_stride range must lie within [1, 4]")
        if not 0 <= self.kernel_prob <= 1:
            raise ConfigError("kernel_prob must lie in [0, 1]")


@dataclass(frozen=True)
class TrainingPair:
    """A noisy volume and its clean counterpart, from the same survey."""

    noisy: TraceVolume
    clean: TraceVolume

    @property
    def noise(self) -> np.ndarray:
        return self.noisy.samples - self.clean.samples


def normalize_pair(inp: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Divide both arrays by the standard deviation of ``inp``."""
    scale = float(np.std(inp))
    if not scale > 0 or not np.isfinite(scale):
        raise DegenerateInputError("input gather has zero variance")
    return inp / scale, target / scale, scale


def sample_patch(
    stack: ChannelStack | np.ndarray, target: np.ndarray, patch: int, seed
) -> TrainingSample:
    """Cut the same uniformly placed square out of every channel and the target."""
    channels = stack.channels if isinstance(stack, ChannelStack) else np.asarray(stack)
    h, w = target.shape
    if channels.shape[1:] != (h, w):
        raise SizeError(f"stack {channels.shape[1:]} and target {(h, w)} differ in shape")
    if h < patch or w < patch:
        raise SizeError(f"gather {(h, w)} smaller than patch {patch}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    win = (slice(top, top + patch), slice(left, left + patch))
    return TrainingSample(
        np.ascontiguousarray(channels[(slice(None),) + win]),
        np.ascontiguousarray(target[win]),
        1.0,
        corner=(top, left),
    )


def random_kernel(rng: np.random.Generator, lengths: Sequence[int] = (3, 5, 7)) -> np.ndarray:
    """Random odd-length kernel with i.i.d. normal taps scaled to unit L1 norm."""
    n = int(rng.choice(lengths))
    k = rng.normal(size=n)
    return k / np.abs(k).sum()


def augment_time_kernel(sample: TrainingSample, kernel: np.ndarray) -> TrainingSample:
    """Convolve every channel and the target along time with one centred kernel."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or kernel.size % 2 == 0:
        raise ConfigError("time kernel must be 1D with odd length")
    if not np.all(np.isfinite(kernel)):
        raise ConfigError("time kernel must be finite")

    # convolve1d correlates with the flipped kernel, i.e. performs true convolution
    def conv(a):
        return convolve1d(a, kernel, axis=-1, mode="constant", cval=0.0)

    return TrainingSample(
        conv(sample.input), conv(sample.target), sample.scale,
        sample.dataset, sample.offset, sample.corner,
    )


def augment_time_stride(gathers: np.ndarray, stride: int, patch: int = 1, phase: int = 0) -> np.ndarray:
    """Keep every ``stride``-th time sample starting at ``phase`` (last axis is time)."""
    gathers = np.asarray(gathers)
    n_time = gathers.shape[-1]
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if n_time < patch * stride:
        raise SizeError(f"{n_time} time samples cannot supply a {patch}-sample patch at stride {stride}")
    return gathers[..., phase % stride::stride]


def make_sample(
    pair: TrainingPair,
    dataset: int,
    offset: int,
    k: int,
    augment: AugmentConfig,
    epoch_seed: int,
) -> TrainingSample:
    """One augmented training sample for a (dataset, offset gather, epoch)."""
    rng = np.random.default_rng([augment.seed, epoch_seed, dataset, offset])
    t_stride = int(rng.integers(augment.time_stride[0], augment.time_stride[1] + 1))
    n_stride = int(rng.integers(augment.neighbor_stride[0], augment.neighbor_stride[1] + 1))
    phase = int(rng.integers(0, t_stride))
    stack = assemble_channel_stack(pair.noisy, offset, k, n_stride)
    target = pair.noise[:, offset, :]
    channels = augment_time_stride(stack.channels, t_stride, augment.patch, phase)
    target = augment_time_stride(target, t_stride, augment.patch, phase)
    center, target, scale = normalize_pair(channels[k], target)
    channels = channels / scale
    sample = sample_patch(channels, target, augment.patch, rng)
    if rng.random() < augment.kernel_prob:
        sample = augment_time_kernel(sample, random_kernel(rng, augment.time_kernel_len))
    return TrainingSample(
        sample.input.astype(np.float32), sample.target.astype(np.float32), scale,
        dataset, offset, sample.corner,
    )


def make_epoch(
    datasets: Sequence[TrainingPair], k: int, augment: AugmentConfig, epoch_seed: int
) -> Iterator[TrainingSample]:
    """Exactly one sample per (dataset, common-offset gather)."""
    for d, pair in enumerate(datasets):
        for offset in range(pair.noisy.geometry.n_receivers):
            yield make_sample(pair, d, offset, k, augment, epoch_seed)


def make_validation(
    datasets: Sequence[TrainingPair], k: int, patch: int, seed: int = 0
) -> list[TrainingSample]:
    """Un-augmented samples (unit strides, no kernel) for validation."""
    plain = AugmentConfig(time_stride=(1, 1), neighbor_stride=(1, 1), patch=patch,
                          kernel_prob=0.0, seed=seed)
    return list(make_epoch(datasets, k, plain, epoch_seed=0))
