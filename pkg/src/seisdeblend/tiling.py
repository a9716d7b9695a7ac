"""Whole-gather noise estimation by overlapping patches, and volume deblending."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeError, SizeError
from .survey import ChannelStack, TraceVolume, assemble_channel_stack

# Maps a batch [b, channel, patch, patch] to noise estimates [b, patch, patch].
PatchPredictor = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TilePlan:
    shape: tuple[int, int]
    patch: int
    stride: int
    windows: tuple[tuple[int, int], ...]

    def coverage(self) -> np.ndarray:
        counts = np.zeros(self.shape, dtype=np.int64)
        for top, left in self.windows:
            counts[top:top + self.patch, left:left + self.patch] += 1
        return counts


def _origins(dim: int, patch: int, stride: int) -> list[int]:
    origins = list(range(0, dim - patch + 1, stride))
    if origins[-1] != dim - patch:
        origins.append(dim - patch)
    return origins


def plan_tiles(h: int, w: int, patch: int, stride: int = 56) -> TilePlan:
    """Windows at multiples of ``stride`` plus a final window flush with each edge."""
    if h < patch or w < patch:
        raise SizeError(f"gather {(h, w)} smaller than patch {patch}")
    if stride < 1:
        raise SizeError("stride must be >= 1")
    windows = tuple((t, l) for t in _origins(h, patch, stride) for l in _origins(w, patch, stride))
    return TilePlan((h, w), patch, stride, windows)


def _as_predictor(model) -> PatchPredictor:
    if callable(model) and not hasattr(model, "config"):
        return model
    from .denoiser import predict_batch

    return lambda batch: predict_batch(model, batch)


def denoise_gather(model, stack: ChannelStack | np.ndarray, plan: TilePlan, batch_size: int = 16) -> np.ndarray:
    """Mean of the overlapping patch predictions at every sample.

    ``model`` is a trained U-net or any callable mapping a batch of patches to
    a batch of single-channel predictions.
    """
    predict = _as_predictor(model)
    channels = stack.channels if isinstance(stack, ChannelStack) else np.asarray(stack)
    if channels.shape[1:] != plan.shape:
        raise ShapeError(f"stack {channels.shape[1:]} does not match tile plan {plan.shape}")
    p = plan.patch
    total = np.zeros(plan.shape, dtype=np.float64)
    for i in range(0, len(plan.windows), batch_size):
        wins = plan.windows[i:i + batch_size]
        batch = np.stack([channels[:, t:t + p, l:l + p] for t, l in wins]).astype(np.float32)
        preds = np.asarray(predict(batch), dtype=np.float64)
        for (t, l), pred in zip(wins, preds):
            total[t:t + p, l:l + p] += pred
    return total / plan.coverage()


def deblend_volume(
    model, volume: TraceVolume, k: int, patch: int | None = None, stride: int = 56,
    neighbor_stride: int = 1, batch_size: int = 16,
) -> tuple[TraceVolume, TraceVolume]:
    """Estimate (signal, noise) for every common-offset gather of ``volume``.

    Each gather stack is divided by the centre gather's standard deviation
    before prediction and the noise estimate multiplied back afterwards.
    """
    if hasattr(model, "config"):
        if model.config.in_channels != 2 * k + 1:
            raise ShapeError(f"model expects {model.config.in_channels} channels, k={k} gives {2 * k + 1}")
        patch = model.config.patch if patch is None else patch
    if patch is None:
        raise ValueError("patch size required for a callable predictor")
    g = volume.geometry
    plan = plan_tiles(g.n_shots, g.n_time, patch, stride)
    noise = np.zeros(g.shape, dtype=np.float64)
    for r in range(g.n_receivers):
        stack = assemble_channel_stack(volume, r, k, neighbor_stride)
        scale = float(np.std(stack.center))
        if not scale > 0:
            continue  # dead gather: nothing to estimate
        noise[:, r, :] = denoise_gather(model, stack.channels / scale, plan, batch_size) * scale
    signal = volume.samples - noise
    return volume.with_samples(signal), volume.with_samples(noise)
