"""Residual-encoder U-net noise estimator and its two-phase training loop."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError, TrainingDivergedError
from .pipeline import TrainingSample


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    encoder_blocks: tuple[int, ...] = (3, 4, 6, 3)
    stage_channels: tuple[int, ...] = (64, 128, 256, 512)
    base_width: int = 64
    patch: int = 224

    def __post_init__(self):
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if len(self.encoder_blocks) != len(self.stage_channels) or len(self.stage_channels) < 2:
            raise ConfigError("encoder_blocks and stage_channels must have equal length >= 2")
        if any(b < 1 for b in self.encoder_blocks) or any(c < 1 for c in self.stage_channels):
            raise ConfigError("block counts and channel widths must be positive")
        if self.patch % self.downsampling != 0:
            raise ConfigError(f"patch {self.patch} not divisible by total downsampling {self.downsampling}")

    @property
    def downsampling(self) -> int:
        # stem conv and max-pool, then one stride-2 stage transition per extra stage
        return 2 ** (len(self.stage_channels) + 1)

    @property
    def k(self) -> int:
        return (self.in_channels - 1) // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(
            int(d["in_channels"]), tuple(d["encoder_blocks"]), tuple(d["stage_channels"]),
            int(d["base_width"]), int(d["patch"]),
        )


TINY_CONFIG = dict(encoder_blocks=(1, 1), stage_channels=(8, 16), base_width=8, patch=32)


@dataclass(frozen=True)
class TrainSchedule:
    frozen_epochs: int = 5
    frozen_lr: float = 1e-2
    main_epochs: int = 350
    lr_min: float = 1e-6
    lr_max: float = 1e-3
    batch_size: int = 32
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div: float = 1e4
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.99)
    n_groups: int = 3

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError("need 0 < lr_min <= lr_max")
        if self.frozen_epochs < 0 or self.main_epochs < 0 or self.frozen_epochs + self.main_epochs < 1:
            raise ConfigError("at least one training epoch required")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def adapt_first_layer(pretrained: np.ndarray, n: int) -> np.ndarray:
    """Spread 3-channel first-layer weights over ``n`` input channels.

    Every new channel gets the sum over the three pretrained channels divided
    by ``n``. With ``n == 3`` the weights are returned unmodified.
    """
    w = np.asarray(pretrained)
    if w.ndim != 4 or w.shape[1] != 3:
        raise ShapeError(f"pretrained first-layer weights must be [out, 3, kh, kw], got {w.shape}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    if n == 3:
        return w
    summed = w.astype(np.float64).sum(axis=1, keepdims=True) / n
    return np.repeat(summed, n, axis=1).astype(w.dtype, copy=False)


def load_pretrained_fixture(out_channels: int = 64) -> np.ndarray:
    """Deterministic stand-in for ImageNet first-layer weights, ``[out, 3, 7, 7]``."""
    path = resources.files("seisdeblend") / "data" / "first_conv_fixture.npy"
    with resources.as_file(path) as p:
        w = np.load(p)
    if out_channels > w.shape[0]:
        raise ConfigError(f"fixture has only {w.shape[0]} filters")
    return w[:out_channels]


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        identity = x if self.down is None else self.down(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


def conv_bn_relu(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, 1, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU())


class UpBlock(nn.Module):
    """Nearest-neighbour upsample, concatenate the skip, two 3x3 convs."""

    def __init__(self, cin: int, cskip: int, cout: int):
        super().__init__()
        self.conv = nn.Sequential(conv_bn_relu(cin + cskip, cout), conv_bn_relu(cout, cout))

    def forward(self, x, skip):
        x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
        return self.conv(torch.cat([x, skip], dim=1))


class Encoder(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.first_conv = nn.Conv2d(config.in_channels, config.base_width, 7, 2, 3, bias=False)
        self.bn = nn.BatchNorm2d(config.base_width)
        self.stages = nn.ModuleList()
        cin = config.base_width
        for i, (n_blocks, cout) in enumerate(zip(config.encoder_blocks, config.stage_channels)):
            blocks = [BasicBlock(cin, cout, 1 if i == 0 else 2)]
            blocks += [BasicBlock(cout, cout) for _ in range(n_blocks - 1)]
            self.stages.append(nn.Sequential(*blocks))
            cin = cout

    def forward(self, x):
        x = F.relu(self.bn(self.first_conv(x)))
        feats = [x]
        x = F.max_pool2d(x, 3, 2, 1)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class UNet(nn.Module):
    """U-net whose encoder is a stack of residual stages; outputs one noise channel."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        chans = list(config.stage_channels)
        self.bottleneck = nn.Sequential(conv_bn_relu(chans[-1], chans[-1]), conv_bn_relu(chans[-1], chans[-1]))
        self.up = nn.ModuleList()
        cin = chans[-1]
        for cskip in chans[-2::-1] + [config.base_width]:
            self.up.append(UpBlock(cin, cskip, cskip))
            cin = cskip
        last = max(config.base_width // 2, 8)
        self.final = UpBlock(cin, config.in_channels, last)
        self.head = nn.Conv2d(last, 1, 1)

    def forward(self, x):
        feats = self.encoder(x)
        y = self.bottleneck(feats[-1])
        for block, skip in zip(self.up, feats[-2::-1]):
            y = block(y, skip)
        y = self.final(y, x)
        return self.head(y)

    def depth_groups(self) -> list[list[nn.Parameter]]:
        """Early encoder, late encoder, decoder + head (shallow to deep)."""
        n = len(self.encoder.stages)
        early = [self.encoder.first_conv, self.encoder.bn, *self.encoder.stages[: max(n // 2, 1)]]
        late = list(self.encoder.stages[max(n // 2, 1):])
        decoder = [self.bottleneck, self.up, self.final, self.head]
        return [[p for m in mods for p in m.parameters()] for mods in (early, late, decoder)]

    def encoder_parameters(self) -> list[nn.Parameter]:
        return list(self.encoder.parameters())

    def decoder_parameters(self) -> list[nn.Parameter]:
        enc = {id(p) for p in self.encoder.parameters()}
        return [p for p in self.parameters() if id(p) not in enc]


DenoiserModel = UNet


def build_model(
    config: UNetConfig, pretrained_first: np.ndarray | None = None, seed: int = 0
) -> UNet:
    """Seeded U-net; the first convolution comes from adapted pretrained weights when given."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = UNet(config)
    if pretrained_first is not None:
        w = adapt_first_layer(pretrained_first, config.in_channels)
        target = model.encoder.first_conv.weight
        if tuple(w.shape) != tuple(target.shape):
            raise ConfigError(f"adapted first-layer weights {w.shape} do not fit {tuple(target.shape)}")
        with torch.no_grad():
            target.copy_(torch.from_numpy(np.ascontiguousarray(w)).to(target.dtype))
    return model


def one_cycle(peak: float, step: float, total_steps: int, pct_start: float = 0.3,
              div_factor: float = 25.0, final_div: float = 1e4) -> float:
    """Cosine warm-up from ``peak/div_factor`` to ``peak``, then cosine anneal to ``peak/final_div``."""
    if total_steps <= 1:
        return peak
    warm = int(round(pct_start * (total_steps - 1)))
    if step <= warm:
        if warm == 0:
            return peak
        start, end, frac = peak / div_factor, peak, step / warm
    else:
        start, end, frac = peak, peak / final_div, (step - warm) / (total_steps - 1 - warm)
    return end + (start - end) * (1 + math.cos(math.pi * frac)) / 2


def group_peak_lr(schedule: TrainSchedule, depth_group: int, n_groups: int) -> float:
    """Peak rates spaced geometrically from ``lr_min`` (shallowest) to ``lr_max`` (deepest)."""
    if not 0 <= depth_group < n_groups:
        raise IndexError(f"depth_group {depth_group} not in [0, {n_groups})")
    if n_groups == 1:
        return schedule.lr_max
    frac = depth_group / (n_groups - 1)
    return schedule.lr_min * (schedule.lr_max / schedule.lr_min) ** frac


def lr_at(schedule: TrainSchedule, depth_group: int, n_groups: int, step: float, total_steps: int) -> float:
    peak = group_peak_lr(schedule, depth_group, n_groups)
    return one_cycle(peak, step, total_steps, schedule.pct_start, schedule.div_factor, schedule.final_div)


@dataclass
class EpochLog:
    epoch: int
    phase: int
    train_mse: float
    valid_mse: float = float("nan")


@dataclass
class TrainResult:
    model: UNet
    history: list[EpochLog] = field(default_factory=list)

    @property
    def best_valid_mse(self) -> float:
        vals = [h.valid_mse for h in self.history if np.isfinite(h.valid_mse)]
        return min(vals) if vals else float("nan")


def _batches(samples: Sequence[TrainingSample], batch_size: int, rng: np.random.Generator | None):
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        x = torch.from_numpy(np.stack([samples[j].input for j in idx]).astype(np.float32))
        y = torch.from_numpy(np.stack([samples[j].target for j in idx])[:, None].astype(np.float32))
        yield x, y


def evaluate(model: UNet, samples: Sequence[TrainingSample], batch_size: int = 32) -> float:
    """Mean squared error over all pixels of ``samples``."""
    if not samples:
        return float("nan")
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for x, y in _batches(samples, batch_size, None):
            total += float(F.mse_loss(model(x.to(_dtype(model))), y.to(_dtype(model)), reduction="sum"))
            count += y.numel()
    return total / count


def _dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def _check_shapes(model: UNet, samples: Sequence[TrainingSample]):
    c = model.config
    for s in samples[:1]:
        if s.input.shape != (c.in_channels, c.patch, c.patch) or s.target.shape != (c.patch, c.patch):
            raise ShapeError(
                f"sample shapes {s.input.shape}/{s.target.shape} do not match model config "
                f"({c.in_channels}, {c.patch}, {c.patch})"
            )


def _run_phase(model, param_groups, peaks_fn, n_epochs, samples_fn, schedule, validation,
               history, best, seed, epoch0, phase, freeze_encoder, log):
    opt = torch.optim.AdamW(
        [{"params": g, "lr": 0.0} for g in param_groups],
        betas=schedule.betas, weight_decay=schedule.weight_decay,
    )
    first = list(samples_fn(epoch0))
    _check_shapes(model, first)
    steps_per_epoch = math.ceil(len(first) / schedule.batch_size)
    total = steps_per_epoch * n_epochs
    step = 0
    dtype = _dtype(model)
    for e in range(n_epochs):
        epoch = epoch0 + e
        samples = first if e == 0 else list(samples_fn(epoch))
        model.train()
        if freeze_encoder:
            model.encoder.eval()
        rng = np.random.default_rng([seed, epoch])
        sse, count = 0.0, 0
        for x, y in _batches(samples, schedule.batch_size, rng):
            for gi, group in enumerate(opt.param_groups):
                group["lr"] = peaks_fn(gi, step, total)
            opt.zero_grad()
            loss = F.mse_loss(model(x.to(dtype)), y.to(dtype))
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, float(loss.detach()))
            loss.backward()
            opt.step()
            step += 1
            sse += float(loss.detach()) * y.numel()
            count += y.numel()
        valid = evaluate(model, validation, schedule.batch_size) if validation else float("nan")
        if validation and not np.isfinite(valid):
            raise TrainingDivergedError(epoch, valid)
        history.append(EpochLog(epoch, phase, sse / count, valid))
        if log is not None:
            log(history[-1])
        if validation and valid < best[0]:
            best[0] = valid
            best[1] = copy.deepcopy(model.state_dict())


def train(
    model: UNet,
    samples: Callable[[int], Iterable[TrainingSample]] | Sequence[TrainingSample],
    schedule: TrainSchedule,
    validation: Sequence[TrainingSample] = (),
    seed: int = 0,
    log: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """Two-phase training with MSE loss on noise targets.

    Phase one trains only the decoder and head (encoder weights and batch-norm
    statistics frozen) at ``frozen_lr``. Phase two trains everything with
    depth-discriminative rates. Both phases follow a 1cycle schedule per
    optimizer step. ``samples`` is either a fixed list reused every epoch or a
    function mapping the global epoch index to that epoch's samples. When a
    validation set is given, the parameters with the lowest validation loss
    are restored at the end.
    """
    samples_fn = samples if callable(samples) else (lambda epoch: samples)
    history: list[EpochLog] = []
    best = [float("inf"), None]

    if schedule.frozen_epochs:
        for p in model.encoder_parameters():
            p.requires_grad_(False)
        try:
            _run_phase(
                model, [model.decoder_parameters()],
                lambda gi, step, total: one_cycle(schedule.frozen_lr, step, total, schedule.pct_start,
                                                  schedule.div_factor, schedule.final_div),
                schedule.frozen_epochs, samples_fn, schedule, validation, history, best,
                seed, 0, 1, True, log,
            )
        finally:
            for p in model.encoder_parameters():
                p.requires_grad_(True)

    if schedule.main_epochs:
        groups = model.depth_groups()
        n = len(groups)
        _run_phase(
            model, groups,
            lambda gi, step, total: lr_at(schedule, gi, n, step, total),
            schedule.main_epochs, samples_fn, schedule, validation, history, best,
            seed, schedule.frozen_epochs, 2, False, log,
        )

    if best[1] is not None:
        model.load_state_dict(best[1])
    model.eval()
    return TrainResult(model, history)


def predict_batch(model: UNet, inputs: np.ndarray) -> np.ndarray:
    """Noise estimates ``[batch, patch, patch]`` for inputs ``[batch, channel, patch, patch]``."""
    c = model.config
    inputs = np.asarray(inputs)
    if inputs.ndim != 4 or inputs.shape[1:] != (c.in_channels, c.patch, c.patch):
        raise ShapeError(f"expected [batch, {c.in_channels}, {c.patch}, {c.patch}], got {inputs.shape}")
    if not np.all(np.isfinite(inputs)):
        raise ValueError("non-finite model input")
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(np.ascontiguousarray(inputs)).to(_dtype(model)))
    return out[:, 0].numpy()


def predict_patch(model: UNet, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs)
    c = model.config
    if inputs.shape != (c.in_channels, c.patch, c.patch):
        raise ShapeError(f"expected ({c.in_channels}, {c.patch}, {c.patch}), got {inputs.shape}")
    return predict_batch(model, inputs[None])[0]
