"""On-disk formats: trace volumes, velocity models, checkpoints, CSVs and PGM images.

Volume file (``.svol``), little-endian::

    4s   magic "SVL1" ("SVL" + format version "1")
    3*u4 n_shots, n_receivers, n_time
    4*f8 dt, shot_spacing, receiver_spacing, near_offset
    u1   towed flag
    f4   samples, shot-major, then receiver, then time

Checkpoint file (``.sdnm``)::

    4s   magic "SDNM"
    u4   version (1)
    u4   length of UTF-8 JSON config, then the JSON bytes
    u4   tensor count, then per tensor:
         u2 name length, name bytes, u1 ndim, ndim*u4 dims, f4 data
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .survey import SurveyGeometry, TraceVolume
from .synthetics import VelocityModel

VOLUME_MAGIC = b"SVL"
VOLUME_VERSION = b"1"
_VOL_HEADER = struct.Struct("<4s3I4dB")

CKPT_MAGIC = b"SDNM"
CKPT_VERSION = 1


def write_volume(volume: TraceVolume, path) -> None:
    g = volume.geometry
    header = _VOL_HEADER.pack(
        VOLUME_MAGIC + VOLUME_VERSION, g.n_shots, g.n_receivers, g.n_time,
        g.dt, g.shot_spacing, g.receiver_spacing, g.near_offset, int(bool(g.towed)),
    )
    payload = np.ascontiguousarray(volume.samples, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_volume(path) -> TraceVolume:
    raw = Path(path).read_bytes()
    if len(raw) < _VOL_HEADER.size:
        raise FormatError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, ns, nr, nt, dt, ss, rs, near, towed = _VOL_HEADER.unpack_from(raw)
    if magic[:3] != VOLUME_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if magic[3:] != VOLUME_VERSION:
        raise FormatError(f"{path}: unsupported version {magic[3:]!r}")
    expected = ns * nr * nt * 4
    got = len(raw) - _VOL_HEADER.size
    if got != expected:
        raise FormatError(f"{path}: payload length {got} bytes, header implies {expected}")
    geometry = SurveyGeometry(ns, nr, nt, dt, ss, rs, near, bool(towed))
    samples = np.frombuffer(raw, dtype="<f4", offset=_VOL_HEADER.size).reshape(ns, nr, nt)
    return TraceVolume(geometry, samples.astype(np.float32))


def image_volume(image: np.ndarray, dt: float, spacing: float = 1.0) -> TraceVolume:
    """Wrap a 2D image ``[rows, samples]`` as a one-shot volume."""
    image = np.asarray(image)
    g = SurveyGeometry(1, image.shape[0], image.shape[1], dt, spacing, spacing, 0.0, False)
    return TraceVolume(g, image[None])


def write_velocity_model(model: VelocityModel, path) -> None:
    """Velocity models use the volume format with dims ``(1, nz, nx)`` and dt = spacings = dx."""
    write_volume(image_volume(model.wave_speed, model.dx, model.dx), path)


def read_velocity_model(path) -> VelocityModel:
    vol = read_volume(path)
    if vol.geometry.n_shots != 1:
        raise FormatError(f"{path}: velocity model must have n_shots=1")
    return VelocityModel(vol.geometry.receiver_spacing, vol.samples[0])


def save_checkpoint(model, path) -> None:
    state = model.state_dict()
    config = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(config)))
        f.write(config)
        f.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            arr = tensor.detach().cpu().numpy()
            b = name.encode()
            f.write(struct.pack("<H", len(b)))
            f.write(b)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    from .denoiser import UNet, UNetConfig

    raw = Path(path).read_bytes()
    pos = 0

    def take(n, field):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated while reading {field}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, n_cfg = struct.unpack("<II", take(8, "version"))
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    config = UNetConfig.from_dict(json.loads(take(n_cfg, "config")))
    model = UNet(config)
    reference = model.state_dict()
    (n_tensors,) = struct.unpack("<I", take(4, "tensor count"))
    state = {}
    for _ in range(n_tensors):
        (n_name,) = struct.unpack("<H", take(2, "name length"))
        name = take(n_name, "name").decode()
        (ndim,) = struct.unpack("<B", take(1, f"{name} ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name} shape"))
        count = math.prod(shape)
        arr = np.frombuffer(take(4 * count, f"{name} data"), dtype="<f4").reshape(shape)
        if name not in reference:
            raise FormatError(f"{path}: unknown tensor {name}")
        state[name] = torch.from_numpy(arr.copy()).to(reference[name].dtype)
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    model.load_state_dict(state)
    model.eval()
    return model


def _fmt(x: float) -> str:
    return repr(float(x))


def write_history(history, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "phase", "train_mse", "valid_mse"])
        for h in history:
            w.writerow([h.epoch, h.phase, _fmt(h.train_mse), _fmt(h.valid_mse)])


def write_snr(report, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["shot", "snr_db"])
        for s, v in enumerate(report.per_shot):
            w.writerow([s, _fmt(v)])
        w.writerow(["mean", _fmt(report.mean_db)])


def read_snr(path) -> tuple[list[float], float]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    per_shot = [float(v) for s, v in rows[1:] if s != "mean"]
    mean = float(next(v for s, v in rows[1:] if s == "mean"))
    return per_shot, mean


def write_sweep(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "repetition", "seed", "best_valid_mse", "status"])
        for r in rows:
            w.writerow([r.k, r.repetition, r.seed, _fmt(r.best_valid_mse), r.status])


def read_sweep(path):
    from .experiment import SweepRow

    with open(path, newline="") as f:
        return [
            SweepRow(int(r["k"]), int(r["repetition"]), int(r["seed"]), float(r["best_valid_mse"]), r["status"])
            for r in csv.DictReader(f)
        ]


def write_pgm(image: np.ndarray, path, clip_std: float = 3.0) -> None:
    """8-bit binary graymap; rows are the image's last axis (time down), clipped at +-3 std."""
    img = np.asarray(image, dtype=np.float64).T
    c = clip_std * float(np.std(img))
    if c <= 0:
        c = 1.0
    grey = np.rint((np.clip(img, -c, c) + c) / (2 * c) * 255).astype(np.uint8)
    h, w = grey.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(grey.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: bad magic")
    w, h = int(parts[1]), int(parts[2])
    data = parts[4] if len(parts) > 4 else b""
    if len(data) != w * h:
        raise FormatError(f"{path}: payload length {len(data)}, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)
