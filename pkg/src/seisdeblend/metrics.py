"""Mean per-shot signal-to-noise ratio."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .survey import TraceVolume


@dataclass(frozen=True)
class SnrReport:
    per_shot: tuple[float, ...]
    mean_db: float
    n_infinite: int = 0  # shots reproduced exactly; excluded from the mean


def snr(signal: TraceVolume | np.ndarray, data: TraceVolume | np.ndarray) -> SnrReport:
    """``10 log10(|signal_s|^2 / |signal_s - data_s|^2)`` per shot, averaged over shots."""
    s = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    d = np.asarray(getattr(data, "samples", data), dtype=np.float64)
    if s.shape != d.shape:
        raise ShapeError(f"signal shape {s.shape} != data shape {d.shape}")
    s = s.reshape(s.shape[0], -1)
    d = d.reshape(d.shape[0], -1)
    energy = np.einsum("ij,ij->i", s, s)
    if np.any(energy <= 0):
        raise DegenerateInputError(f"shot {int(np.argmin(energy))} has zero signal energy")
    resid = s - d
    err = np.einsum("ij,ij->i", resid, resid)
    per_shot = []
    for e, r in zip(energy, err):
        per_shot.append(math.inf if r == 0 else 10.0 * math.log10(e / r))
    finite = [v for v in per_shot if math.isfinite(v)]
    n_inf = len(per_shot) - len(finite)
    if n_inf:
        warnings.warn(f"{n_inf} shot(s) reproduced exactly (infinite SNR); excluded from the mean")
    mean = float(np.mean(finite)) if finite else math.inf
    return SnrReport(tuple(per_shot), mean, n_inf)
