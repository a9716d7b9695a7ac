"""Command-line interface: ``seisdeblend <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import SeisError


def _add_geometry(p: argparse.ArgumentParser):
    g = p.add_argument_group("geometry")
    g.add_argument("--shots", type=int, default=128)
    g.add_argument("--receivers", type=int, default=48)
    g.add_argument("--nt", type=int, default=600, help="samples per trace")
    g.add_argument("--dt", type=float, default=0.001)
    g.add_argument("--shot-spacing", type=float, default=5.0)
    g.add_argument("--receiver-spacing", type=float, default=5.0)
    g.add_argument("--near-offset", type=float, default=50.0)
    g.add_argument("--nz", type=int, default=200, help="model depth in cells")
    g.add_argument("--dx", type=float, default=2.5)
    g.add_argument("--f-peak", type=float, default=35.0)


def _add_training(p: argparse.ArgumentParser):
    t = p.add_argument_group("training")
    t.add_argument("--clean", nargs="+", required=True, help="clean training volumes")
    t.add_argument("--blended", nargs="+", required=True, help="noisy training volumes, same order")
    t.add_argument("--valid-clean", nargs="+", required=True)
    t.add_argument("--valid-blended", nargs="+", required=True)
    t.add_argument("--patch", type=int, default=96)
    t.add_argument("--time-stride", default="1,5", help="min,max time-stride augmentation")
    t.add_argument("--neighbor-stride", default="1,4", help="min,max adjacent-gather stride")
    t.add_argument("--encoder-blocks", default="1,1,1,1")
    t.add_argument("--stage-channels", default="16,32,64,128")
    t.add_argument("--base-width", type=int, default=16)
    t.add_argument("--frozen-epochs", type=int, default=5)
    t.add_argument("--frozen-lr", type=float, default=1e-2)
    t.add_argument("--main-epochs", type=int, default=40)
    t.add_argument("--lr-min", type=float, default=1e-6)
    t.add_argument("--lr-max", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--pretrained", default="fixture", help="'fixture', 'none' or a .npy [out,3,7,7] file")
    t.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seisdeblend", description="Synthetic blended surveys and U-net deblending.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate random velocity models and simulate surveys")
    p.add_argument("--models", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_geometry(p)

    p = sub.add_parser("blend", help="blend a clean survey with randomised shot delays")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mean-delay", type=float, default=None, help="seconds; omit to draw per dataset")
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--white-noise", type=float, default=0.0, help="std relative to the data std")
    p.add_argument("--interference", default=None, help="volume whose shots are injected as interference")
    p.add_argument("--interference-gain", type=float, default=1.0)
    p.add_argument("--schedule-out", default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train the noise-estimating U-net")
    _add_training(p)
    p.add_argument("--k", type=int, default=1, help="adjacent gathers per side")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="loss history CSV")

    p = sub.add_parser("denoise", help="estimate noise and signal of a volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--signal-out", required=True)
    p.add_argument("--noise-out", default=None)
    p.add_argument("--stride", type=int, default=56)

    p = sub.add_parser("eval", help="mean per-shot SNR of data against a reference signal")
    p.add_argument("--signal", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="CSV (shot,snr_db)")

    p = sub.add_parser("sweep", help="best validation loss versus adjacent-gather count")
    _add_training(p)
    p.add_argument("--k-values", default="0,1")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--out", required=True, help="sweep CSV")

    p = sub.add_parser("stack", help="NMO-correct and stack CMP gathers")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", default=None)
    p.add_argument("--profile", default="0.5:1500,2:2000", help="t0:v knots")

    p = sub.add_parser("run", help="execute a run manifest")
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, default=None, help="override the manifest seed")
    return parser


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


def _training_inputs(args):
    from .denoiser import TrainSchedule
    from .pipeline import AugmentConfig, TrainingPair

    if len(args.clean) != len(args.blended) or len(args.valid_clean) != len(args.valid_blended):
        raise SeisError("clean and blended lists must have equal length")
    train_pairs = [TrainingPair(io.read_volume(b), io.read_volume(c)) for c, b in zip(args.clean, args.blended)]
    valid_pairs = [TrainingPair(io.read_volume(b), io.read_volume(c))
                   for c, b in zip(args.valid_clean, args.valid_blended)]
    unet = dict(encoder_blocks=_ints(args.encoder_blocks), stage_channels=_ints(args.stage_channels),
                base_width=args.base_width)
    schedule = TrainSchedule(args.frozen_epochs, args.frozen_lr, args.main_epochs, args.lr_min, args.lr_max,
                             args.batch_size)
    return train_pairs, valid_pairs, unet, schedule, AugmentConfig(time_stride=_ints(args.time_stride),
                                                                 neighbor_stride=_ints(args.neighbor_stride),
                                                                 patch=args.patch)


def _cmd_gen(args):
    from .experiment import derive_seed
    from .survey import SurveyGeometry
    from .synthetics import ModelGenParams, SimulationConfig, generate_velocity_model, simulate_survey

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geometry = SurveyGeometry(args.shots, args.receivers, args.nt, args.dt, args.shot_spacing,
                              args.receiver_spacing, args.near_offset)
    cfg = SimulationConfig(f_peak=args.f_peak)
    far = args.near_offset + (args.receivers - 1) * args.receiver_spacing
    nx = int(np.ceil((far + (args.shots - 1) * args.shot_spacing + 2 * cfg.aperture) / args.dx)) + 1
    for i in range(args.models):
        params = ModelGenParams(nx=nx, nz=args.nz, dx=args.dx, speed_range=(1500.0, 3500.0),
                                seed=derive_seed(args.seed, 10, i))
        model = generate_velocity_model(params)
        io.write_velocity_model(model, out / f"model_{i:03d}.svol")
        io.write_volume(simulate_survey(model, geometry, cfg), out / f"survey_{i:03d}.svol")
    return 0


def _cmd_blend(args):
    from .blending import (add_white_noise, blend, draw_dataset_blend_params, draw_schedule,
                           extract_blended, inject_interference)
    from .experiment import derive_seed

    vol = io.read_volume(args.input)
    if args.mean_delay is None:
        mean_delay, jitter = draw_dataset_blend_params(derive_seed(args.seed, 1))
    else:
        mean_delay, jitter = args.mean_delay, args.jitter or 0.0
    schedule = draw_schedule(vol.geometry.n_shots, mean_delay, jitter, args.seed)
    out = extract_blended(blend(vol, schedule))
    if args.interference:
        out = inject_interference(out, io.read_volume(args.interference), args.interference_gain,
                                  derive_seed(args.seed, 2))
    if args.white_noise > 0:
        out = add_white_noise(out, args.white_noise, derive_seed(args.seed, 3))
    io.write_volume(out, args.out)
    if args.schedule_out:
        Path(args.schedule_out).write_text(json.dumps(schedule.to_dict()))
    return 0


def _cmd_train(args):
    from .experiment import fit_denoiser

    train_pairs, valid_pairs, unet, schedule, augment = _training_inputs(args)
    result = fit_denoiser(
        train_pairs, valid_pairs, args.k, unet, schedule, augment, args.seed, args.pretrained,
        log_fn=lambda h: print(f"epoch {h.epoch} phase {h.phase} train {h.train_mse:.5f} valid {h.valid_mse:.5f}"),
    )
    io.save_checkpoint(result.model, args.out)
    if args.history:
        io.write_history(result.history, args.history)
    return 0


def _cmd_denoise(args):
    from .tiling import deblend_volume

    model = io.load_checkpoint(args.checkpoint)
    signal, noise = deblend_volume(model, io.read_volume(args.input), model.config.k, stride=args.stride)
    io.write_volume(signal, args.signal_out)
    if args.noise_out:
        io.write_volume(noise, args.noise_out)
    return 0


def _cmd_eval(args):
    from .metrics import snr

    report = snr(io.read_volume(args.signal), io.read_volume(args.data))
    print(f"mean SNR {report.mean_db:.3f} dB over {len(report.per_shot)} shots")
    if args.out:
        io.write_snr(report, args.out)
    return 0


def _cmd_sweep(args):
    from .experiment import neighbor_sweep, sweep_summary

    train_pairs, valid_pairs, unet, schedule, augment = _training_inputs(args)
    rows = neighbor_sweep(train_pairs, valid_pairs, _ints(args.k_values), args.repetitions, unet,
                          schedule, augment, args.seed, args.pretrained)
    io.write_sweep(rows, args.out)
    for k, st in sweep_summary(rows).items():
        print(f"k={k}: median {st['median']:.6g} min {st['min']:.6g} ({st['n_ok']} ok)")
    return 0


def _cmd_stack(args):
    from .moveout import VelocityProfile, stack_volume

    vol = io.read_volume(args.input)
    img = stack_volume(vol, VelocityProfile.parse(args.profile))
    io.write_volume(io.image_volume(img, vol.geometry.dt, vol.geometry.receiver_spacing / 2), args.out)
    if args.pgm:
        io.write_pgm(img, args.pgm)
    return 0


def _cmd_run(args):
    from .experiment import parse_manifest, run_experiment

    manifest = parse_manifest(Path(args.manifest))
    if args.seed is not None:
        manifest.sections.setdefault("run", {})["seed"] = str(args.seed)
    run_experiment(manifest)
    return 0


COMMANDS = {
    "gen": _cmd_gen, "blend": _cmd_blend, "train": _cmd_train, "denoise": _cmd_denoise,
    "eval": _cmd_eval, "sweep": _cmd_sweep, "stack": _cmd_stack, "run": _cmd_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (SeisError, OSError) as exc:
        print(f"seisdeblend {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
