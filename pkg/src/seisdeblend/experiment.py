"""Training orchestration, the adjacent-gather sweep, and manifest-driven runs."""

from __future__ import annotations

import configparser
import json
import logging
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import io
from .blending import (
    add_white_noise, blend, draw_dataset_blend_params, draw_schedule, extract_blended,
    inject_interference,
)
from .denoiser import (
    EpochLog, TrainResult, TrainSchedule, UNetConfig, build_model, load_pretrained_fixture, train,
)
from .errors import ManifestError, TrainingDivergedError
from .metrics import snr
from .moveout import DEFAULT_PROFILE, VelocityProfile, stack_volume
from .pipeline import AugmentConfig, TrainingPair, make_epoch, make_validation
from .survey import SurveyGeometry, TraceVolume
from .synthetics import ModelGenParams, SimulationConfig, generate_velocity_model, simulate_survey
from .tiling import deblend_volume

log = logging.getLogger(__name__)


def derive_seed(*key: int) -> int:
    """Stable 31-bit seed from an integer key path."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0] >> 1)


def pretrained_weights(source, base_width: int) -> np.ndarray | None:
    if source is None or (isinstance(source, str) and source.lower() in ("none", "")):
        return None
    if isinstance(source, str) and source.lower() == "fixture":
        return load_pretrained_fixture(base_width)
    if isinstance(source, (str, Path)):
        return np.load(source)
    return np.asarray(source)


def fit_denoiser(
    train_pairs: Sequence[TrainingPair],
    valid_pairs: Sequence[TrainingPair],
    k: int,
    unet: dict,
    schedule: TrainSchedule,
    augment: AugmentConfig,
    seed: int,
    pretrained="fixture",
    log_fn: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """Build a U-net for ``2k+1`` channels and run both training phases.

    Validation patches are fixed (unit strides, no kernel, seed 0) so runs
    with different seeds or ``k`` are scored on the same windows.
    """
    config = UNetConfig(in_channels=2 * k + 1, patch=augment.patch, **unet)
    model = build_model(config, pretrained_weights(pretrained, config.base_width), seed=derive_seed(seed, 1))
    augment = replace(augment, seed=derive_seed(seed, 2))
    validation = make_validation(valid_pairs, k, augment.patch, seed=0)

    def epoch_samples(epoch):
        return list(make_epoch(train_pairs, k, augment, epoch_seed=epoch))

    return train(model, epoch_samples, schedule, validation, seed=derive_seed(seed, 3), log=log_fn)


@dataclass(frozen=True)
class SweepRow:
    k: int
    repetition: int
    seed: int
    best_valid_mse: float
    status: str = "ok"


def neighbor_sweep(
    train_pairs: Sequence[TrainingPair],
    valid_pairs: Sequence[TrainingPair],
    k_values: Sequence[int],
    repetitions: int,
    unet: dict,
    schedule: TrainSchedule,
    augment: AugmentConfig,
    base_seed: int = 0,
    pretrained="fixture",
) -> list[SweepRow]:
    """Train each (k, repetition) cell from a fresh seed and keep its best validation MSE.

    Repetition ``r`` uses the same seed for every ``k``, so cells are paired.
    """
    rows = []
    for k in k_values:
        for rep in range(repetitions):
            seed = derive_seed(base_seed, rep)
            try:
                result = fit_denoiser(train_pairs, valid_pairs, k, unet, schedule, augment, seed, pretrained)
                rows.append(SweepRow(k, rep, seed, result.best_valid_mse))
            except TrainingDivergedError as exc:
                log.warning("sweep cell k=%d rep=%d diverged: %s", k, rep, exc)
                rows.append(SweepRow(k, rep, seed, float("nan"), "diverged"))
            log.info("sweep k=%d rep=%d best_valid_mse=%.6g", k, rep, rows[-1].best_valid_mse)
    return rows


def sweep_summary(rows: Sequence[SweepRow]) -> dict[int, dict[str, float]]:
    """Median and minimum best validation MSE per ``k`` over successful cells."""
    out = {}
    for k in sorted({r.k for r in rows}):
        vals = [r.best_valid_mse for r in rows if r.k == k and r.status == "ok"]
        out[k] = {
            "median": statistics.median(vals) if vals else float("nan"),
            "min": min(vals) if vals else float("nan"),
            "n_ok": len(vals),
        }
    return out


# --------------------------------------------------------------------------- manifests

STAGES = ("gen", "blend", "train", "denoise", "eval", "stack", "sweep")
_REQUIRES = {
    "gen": set(),
    "blend": {"clean"},
    "train": {"clean", "blended"},
    "denoise": {"checkpoint", "blended"},
    "eval": {"clean", "blended", "deblended"},
    "stack": {"clean", "blended"},
    "sweep": {"clean", "blended"},
}
_PRODUCES = {
    "gen": {"clean", "models"},
    "blend": {"blended"},
    "train": {"checkpoint"},
    "denoise": {"deblended"},
    "eval": {"snr"},
    "stack": {"stacks"},
    "sweep": {"sweep"},
}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


@dataclass
class RunManifest:
    path: Path | None
    sections: dict[str, dict[str, str]]

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    @property
    def seed(self) -> int:
        return int(self.get("run", "seed", 0))

    @property
    def out(self) -> Path:
        out = Path(self.get("run", "out", "run"))
        if not out.is_absolute() and self.path is not None:
            out = self.path.parent / out
        return out

    @property
    def stages(self) -> list[str]:
        text = self.get("run", "stages", "")
        return [s.strip() for s in str(text).split(",") if s.strip()]

    @property
    def n_models(self) -> int:
        return int(self.get("models", "count", 4))

    @property
    def n_valid(self) -> int:
        default = max(1, round(self.n_models * 2 / 20))
        return int(self.get("models", "n_valid", default))

    def geometry(self) -> SurveyGeometry:
        g = self.sections.get("geometry", {})
        return SurveyGeometry(
            int(g.get("n_shots", 250)), int(g.get("n_receivers", 300)), int(g.get("n_time", 1200)),
            float(g.get("dt", 0.001)), float(g.get("shot_spacing", 5.0)),
            float(g.get("receiver_spacing", 5.0)), float(g.get("near_offset", 0.0)), True,
        )

    def sim_config(self) -> SimulationConfig:
        s = self.sections.get("simulation", {})
        kw = {}
        for key in ("f_peak", "source_depth", "receiver_depth", "aperture", "cfl_factor",
                    "points_per_wavelength"):
            if key in s:
                kw[key] = float(s[key])
        if "boundary_width" in s:
            kw["boundary_width"] = int(s["boundary_width"])
        return SimulationConfig(**kw)

    def model_params(self, index: int) -> ModelGenParams:
        m = self.sections.get("models", {})
        g = self.geometry()
        cfg = self.sim_config()
        dx = float(m.get("dx", 2.5))
        span = cfg.aperture + g.near_offset + (g.n_receivers - 1) * g.receiver_spacing
        span += (g.n_shots - 1) * g.shot_spacing + cfg.aperture
        nx = int(m.get("nx", int(np.ceil(span / dx)) + 1))
        return ModelGenParams(
            nx=nx, nz=int(m.get("nz", 200)), dx=dx,
            n_layers=_ints(m.get("n_layers", "4,10")),
            speed_range=_floats(m.get("speed_range", "1500,4000")),
            interface_roughness=float(m.get("roughness", 20.0)),
            lateral_wavelength=float(m.get("lateral_wavelength", 400.0)),
            lateral_gradient=float(m.get("lateral_gradient", 0.0)),
            seed=derive_seed(self.seed, 10, index),
        )

    def unet(self) -> dict:
        t = self.sections.get("train", {})
        return dict(
            encoder_blocks=_ints(t.get("encoder_blocks", "3,4,6,3")),
            stage_channels=_ints(t.get("stage_channels", "64,128,256,512")),
            base_width=int(t.get("base_width", 64)),
        )

    def schedule(self, main_epochs: int | None = None) -> TrainSchedule:
        t = self.sections.get("train", {})
        return TrainSchedule(
            frozen_epochs=int(t.get("frozen_epochs", 5)),
            frozen_lr=float(t.get("frozen_lr", 1e-2)),
            main_epochs=int(t.get("main_epochs", 350)) if main_epochs is None else main_epochs,
            lr_min=float(t.get("lr_min", 1e-6)),
            lr_max=float(t.get("lr_max", 1e-3)),
            batch_size=int(t.get("batch_size", 32)),
        )

    def augment(self) -> AugmentConfig:
        t = self.sections.get("train", {})
        return AugmentConfig(
            time_kernel_len=_ints(t.get("time_kernel_len", "3,5,7")),
            time_stride=_ints(t.get("time_stride", "1,5")),
            neighbor_stride=_ints(t.get("neighbor_stride", "1,4")),
            patch=int(t.get("patch", 224)),
            kernel_prob=float(t.get("kernel_prob", 1.0)),
        )

    @property
    def k(self) -> int:
        return int(self.get("train", "k", 3))

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.read_dict(self.sections)
        import io as _io

        buf = _io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_manifest(path_or_text, base: Path | None = None) -> RunManifest:
    """Parse an INI (or JSON) manifest and validate it against the run directory."""
    path = None
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text
                                          and Path(path_or_text).exists()):
        path = Path(path_or_text)
        text = path.read_text()
    if isinstance(text, str) and text.lstrip().startswith("{"):
        data = json.loads(text)
        sections = {s: {k: (",".join(map(str, v)) if isinstance(v, list) else str(v)) for k, v in d.items()}
                    for s, d in data.items()}
    else:
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ManifestError(f"unparseable manifest: {exc}") from exc
        sections = {s: dict(cp[s]) for s in cp.sections()}
    manifest = RunManifest(path if path is not None else (base / "manifest.ini" if base else None), sections)
    validate_manifest(manifest)
    return manifest


def _paths(out: Path, n: int) -> dict[str, list[Path]]:
    return {
        "models": [out / "models" / f"model_{i:03d}.svol" for i in range(n)],
        "clean": [out / "surveys" / f"clean_{i:03d}.svol" for i in range(n)],
        "blended": [out / "surveys" / f"blended_{i:03d}.svol" for i in range(n)],
    }


def _checkpoint_path(m: RunManifest) -> Path:
    given = m.get("denoise", "checkpoint")
    if given:
        p = Path(given)
        return p if p.is_absolute() or m.path is None else m.path.parent / p
    return m.out / "checkpoint.sdnm"


def validate_manifest(m: RunManifest) -> None:
    """Reject unknown stages, bad parameters and missing inputs before any compute."""
    unknown = [s for s in m.stages if s not in STAGES]
    if unknown:
        raise ManifestError(f"unknown stage(s): {', '.join(unknown)}")
    try:
        m.geometry()
        for i in range(m.n_models if {"gen"} & set(m.stages) else 0):
            m.model_params(i)
        if {"train", "sweep"} & set(m.stages):
            m.schedule()
            m.augment()
            aug, g = m.augment(), m.geometry()
            UNetConfig(in_channels=2 * m.k + 1, patch=aug.patch, **m.unet())
            if g.n_shots < aug.patch or g.n_time < aug.patch * aug.time_stride[1]:
                raise ManifestError(
                    f"gathers ({g.n_shots} shots x {g.n_time} samples) too small for patch {aug.patch} "
                    f"at time stride up to {aug.time_stride[1]}"
                )
        if m.n_valid >= m.n_models and {"train", "sweep"} & set(m.stages):
            raise ManifestError("no training surveys left after the validation split")
    except (ValueError, TypeError, KeyError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestError(f"invalid manifest parameter: {exc}") from exc

    paths = _paths(m.out, m.n_models)
    on_disk = {name for name, ps in paths.items() if ps and all(p.exists() for p in ps)}
    if _checkpoint_path(m).exists():
        on_disk.add("checkpoint")
    held = range(m.n_models - m.n_valid, m.n_models)
    if all((m.out / "deblended" / f"signal_{i:03d}.svol").exists() for i in held):
        on_disk.add("deblended")
    available = set(on_disk)
    for stage in m.stages:
        missing = _REQUIRES[stage] - available
        if missing:
            raise ManifestError(f"stage '{stage}' is missing input(s): {', '.join(sorted(missing))}")
        available |= _PRODUCES[stage]


def _load_pairs(out: Path, indices) -> list[TrainingPair]:
    paths = _paths(out, max(indices) + 1)
    return [TrainingPair(io.read_volume(paths["blended"][i]), io.read_volume(paths["clean"][i])) for i in indices]


def run_experiment(manifest: RunManifest | str | Path, log_fn=print) -> dict:
    """Execute the manifest's stages in order; artifacts go under the run directory."""
    m = manifest if isinstance(manifest, RunManifest) else parse_manifest(manifest)
    validate_manifest(m)
    out = m.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.ini").write_text(m.to_ini())
    seeds: dict[str, int] = {"global": m.seed}
    paths = _paths(out, m.n_models)
    n = m.n_models
    train_idx = list(range(n - m.n_valid))
    held_idx = list(range(n - m.n_valid, n))
    results: dict = {"out": out}

    for stage in m.stages:
        log_fn(f"[{stage}]")
        if stage == "gen":
            (out / "models").mkdir(exist_ok=True)
            (out / "surveys").mkdir(exist_ok=True)
            geometry, cfg = m.geometry(), m.sim_config()
            for i in range(n):
                params = m.model_params(i)
                seeds[f"model_{i:03d}"] = params.seed
                model = generate_velocity_model(params)
                io.write_velocity_model(model, paths["models"][i])
                io.write_volume(simulate_survey(model, geometry, cfg), paths["clean"][i])
                log_fn(f"  survey {i} simulated")

        elif stage == "blend":
            b = m.sections.get("blend", {})
            (out / "schedules").mkdir(exist_ok=True)
            clean = [io.read_volume(p) for p in paths["clean"]]
            for i, vol in enumerate(clean):
                s_seed = derive_seed(m.seed, 20, i)
                seeds[f"schedule_{i:03d}"] = s_seed
                if str(b.get("mean_delay", "random")) == "random":
                    mean_delay, jitter = draw_dataset_blend_params(
                        derive_seed(m.seed, 21, i),
                        _floats(b.get("mean_delay_range", "0.5,1.5")),
                        _floats(b.get("jitter_range", "0.1,0.6")),
                    )
                else:
                    mean_delay, jitter = float(b["mean_delay"]), float(b.get("jitter", 0.0))
                schedule = draw_schedule(vol.geometry.n_shots, mean_delay, jitter, s_seed)
                (out / "schedules" / f"schedule_{i:03d}.json").write_text(json.dumps(schedule.to_dict()))
                blended = extract_blended(blend(vol, schedule))
                gain = float(b.get("interference_gain", 0.0))
                if gain > 0 and n > 1:
                    other = clean[(i + 1) % n]
                    rel = gain * float(np.std(vol.samples)) / float(np.std(other.samples))
                    seeds[f"interference_{i:03d}"] = derive_seed(m.seed, 22, i)
                    blended = inject_interference(blended, other, rel, seeds[f"interference_{i:03d}"])
                sigma = float(b.get("white_noise", 0.0))
                if sigma > 0:
                    seeds[f"white_noise_{i:03d}"] = derive_seed(m.seed, 23, i)
                    blended = add_white_noise(blended, sigma, seeds[f"white_noise_{i:03d}"])
                io.write_volume(blended, paths["blended"][i])

        elif stage == "train":
            seeds["train"] = derive_seed(m.seed, 30)
            result = fit_denoiser(
                _load_pairs(out, train_idx), _load_pairs(out, held_idx), m.k, m.unet(),
                m.schedule(), m.augment(), seeds["train"], m.get("train", "pretrained", "fixture"),
                log_fn=lambda h: log_fn(f"  epoch {h.epoch} phase {h.phase} train {h.train_mse:.5f} "
                                        f"valid {h.valid_mse:.5f}"),
            )
            io.save_checkpoint(result.model, out / "checkpoint.sdnm")
            io.write_history(result.history, out / "history.csv")
            results["train"] = result

        elif stage == "denoise":
            model = io.load_checkpoint(_checkpoint_path(m))
            stride = int(m.get("denoise", "stride", 56))
            (out / "deblended").mkdir(exist_ok=True)
            for i in held_idx:
                signal, noise = deblend_volume(model, io.read_volume(paths["blended"][i]), model.config.k,
                                               stride=stride)
                io.write_volume(signal, out / "deblended" / f"signal_{i:03d}.svol")
                io.write_volume(noise, out / "deblended" / f"noise_{i:03d}.svol")

        elif stage == "eval":
            summary = []
            for i in held_idx:
                clean = io.read_volume(paths["clean"][i])
                r_in = snr(clean, io.read_volume(paths["blended"][i]))
                r_out = snr(clean, io.read_volume(out / "deblended" / f"signal_{i:03d}.svol"))
                io.write_snr(r_in, out / f"snr_input_{i:03d}.csv")
                io.write_snr(r_out, out / f"snr_output_{i:03d}.csv")
                summary.append((i, r_in.mean_db, r_out.mean_db))
                log_fn(f"  survey {i}: SNR input {r_in.mean_db:.2f} dB -> output {r_out.mean_db:.2f} dB")
            with open(out / "snr_summary.csv", "w") as f:
                f.write("survey,input_db,output_db\n")
                for i, a, b in summary:
                    f.write(f"{i},{a!r},{b!r}\n")
            results["snr"] = summary

        elif stage == "stack":
            profile = VelocityProfile.parse(m.get("stack", "profile", str(DEFAULT_PROFILE)))
            (out / "stacks").mkdir(exist_ok=True)
            for i in held_idx:
                sources = {"clean": paths["clean"][i], "blended": paths["blended"][i]}
                deb = out / "deblended" / f"signal_{i:03d}.svol"
                if deb.exists():
                    sources["deblended"] = deb
                for name, p in sources.items():
                    vol = io.read_volume(p)
                    img = stack_volume(vol, profile)
                    io.write_volume(io.image_volume(img, vol.geometry.dt, vol.geometry.receiver_spacing / 2),
                                    out / "stacks" / f"{name}_{i:03d}.svol")
                    io.write_pgm(img, out / "stacks" / f"{name}_{i:03d}.pgm")

        elif stage == "sweep":
            s = m.sections.get("sweep", {})
            seeds["sweep"] = derive_seed(m.seed, 40)
            rows = neighbor_sweep(
                _load_pairs(out, train_idx), _load_pairs(out, held_idx),
                _ints(s.get("k_values", "0,1,2,3,4,5,6,7,8")), int(s.get("repetitions", 45)),
                m.unet(), m.schedule(main_epochs=int(s.get("main_epochs", 10))), m.augment(),
                seeds["sweep"], m.get("train", "pretrained", "fixture"),
            )
            io.write_sweep(rows, out / "sweep.csv")
            with open(out / "sweep_summary.csv", "w") as f:
                f.write("k,median_best_valid_mse,min_best_valid_mse,n_ok\n")
                for k, st in sweep_summary(rows).items():
                    f.write(f"{k},{st['median']!r},{st['min']!r},{st['n_ok']}\n")
            results["sweep"] = rows

    (out / "seeds.json").write_text(json.dumps(seeds, indent=2, sort_keys=True))
    return results

