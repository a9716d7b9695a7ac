"""End-to-end acceptance criteria, one test each, at their stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The desk-scale criteria (9-11) share one generated dataset built from
``scripts/desk.ini``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy.ndimage import gaussian_filter1d

from seisdeblend import io
from seisdeblend.blending import blend, draw_schedule, extract_blended
from seisdeblend.denoiser import (
    TINY_CONFIG, EpochLog, TrainSchedule, UNetConfig, adapt_first_layer, build_model, load_pretrained_fixture,
    train,
)
from seisdeblend.experiment import (
    SweepRow, derive_seed, fit_denoiser, neighbor_sweep, parse_manifest, run_experiment, sweep_summary,
)
from seisdeblend.metrics import SnrReport, snr
from seisdeblend.moveout import DEFAULT_PROFILE, CmpGather, VelocityProfile, nmo_correct, nmo_times
from seisdeblend.pipeline import TrainingPair, TrainingSample
from seisdeblend.survey import SurveyGeometry, TraceVolume, assemble_channel_stack
from seisdeblend.synthetics import SimulationConfig, VelocityModel, ricker, simulate_shot
from seisdeblend.tiling import denoise_gather, plan_tiles

from conftest import ACCEPTANCE_RESULTS, make_volume

pytestmark = pytest.mark.acceptance

DESK_MANIFEST = Path(__file__).resolve().parents[1] / "scripts" / "desk.ini"


def record(name: str, ok: bool, detail: str):
    ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ----------------------------------------------------------------------------- 1


def test_c01_first_layer_adaptation():
    t = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    identity_ok = True
    for _ in range(100):
        w = rng.normal(size=(8, 3, 7, 7))
        for n in (1, 5, 7, 9, 17):
            got = adapt_first_layer(w, n)
            oracle = np.empty((8, n, 7, 7))
            for c in range(n):
                oracle[:, c] = (w[:, 0] + w[:, 1] + w[:, 2]) / n
            worst = max(worst, float(np.max(np.abs(got - oracle) / np.maximum(np.abs(oracle), 1e-300))))
        identity_ok &= adapt_first_layer(w, 3) is w
    elapsed = time.perf_counter() - t
    record("1 first-layer adaptation", worst <= 1e-12 and identity_ok and elapsed < 1.0,
           f"max rel err {worst:.2e}, N=3 identity {identity_ok}, {elapsed:.2f}s")


# ----------------------------------------------------------------------------- 2


def test_c02_snr_exactness():
    t = time.perf_counter()
    s = np.ones((2, 3, 4))
    e0 = abs(snr(s, np.zeros_like(s)).mean_db - 0.0)
    s20 = np.zeros((3, 1, 2))
    s20[:, 0, 0] = 10.0
    d20 = s20.copy()
    d20[:, 0, 1] = 1.0
    e20 = abs(snr(s20, d20).mean_db - 20.0)
    s15 = np.array([[[10.0, 0.0]], [[10.0, 0.0]]])
    d15 = s15.copy()
    d15[0, 0, 1] = math.sqrt(10.0)
    d15[1, 0, 1] = 1.0
    e15 = abs(snr(s15, d15).mean_db - 15.0)
    rng = np.random.default_rng(2)
    scale_err = 0.0
    for _ in range(50):
        shape = tuple(rng.integers(1, 12, 3))
        sig = rng.normal(size=shape)
        data = sig + rng.uniform(0.05, 2.0) * rng.normal(size=shape)
        a = float(np.exp(rng.uniform(-7, 7)))
        scale_err = max(scale_err, abs(snr(a * sig, a * data).mean_db - snr(sig, data).mean_db))
    worst = max(e0, e20, e15)
    elapsed = time.perf_counter() - t
    record("2 SNR exactness", worst <= 1e-9 and scale_err <= 1e-9 and elapsed < 1.0,
           f"example err {worst:.1e} dB, scale-invariance err {scale_err:.1e} dB, {elapsed:.2f}s")


# ----------------------------------------------------------------------------- 3


def _first_arrival(trace, dt, frac=0.01):
    return np.argmax(np.abs(trace) > frac * np.abs(trace).max()) * dt


def test_c03_propagator_traveltime():
    t = time.perf_counter()
    dt = 0.001
    offsets = np.array([100.0, 200.0, 400.0])
    cfg = SimulationConfig()
    # pick the wavelet the same way so the picks measure travel time alone
    onset = _first_arrival(ricker(np.arange(1000) * dt - cfg.wavelet_delay, cfg.f_peak), dt)
    lines, ok = [], True
    for c in (1500.0, 2500.0, 4000.0):
        model = VelocityModel(2.5, np.full((80, 240), c))
        recs = [simulate_shot(model, 0, SurveyGeometry(1, 1, 400, dt, near_offset=x), cfg)[0] for x in offsets]
        for x, tr in zip(offsets, recs):
            err = abs(_first_arrival(tr, dt) - onset - x / c)
            tol = max(2 * dt, 0.01 * x / c)
            ok &= err <= tol
            lines.append(f"c={c:.0f} x={x:.0f}: {err * 1e3:.2f} ms")
    elapsed = time.perf_counter() - t
    record("3 propagator traveltime", ok and elapsed < 120, "; ".join(lines) + f"; {elapsed:.1f}s")


# ----------------------------------------------------------------------------- 4


def test_c04_blending_round_trip():
    t = time.perf_counter()
    rng = np.random.default_rng(4)
    identity = True
    for i in range(10):
        vol = make_volume(int(rng.integers(2, 8)), int(rng.integers(1, 5)), int(rng.integers(50, 400)),
                          seed=100 + i)
        jitter = float(rng.uniform(0.0, 0.2))
        mean_delay = vol.geometry.record_length + jitter + float(rng.uniform(0.0, 0.3))
        sched = draw_schedule(vol.geometry.n_shots, mean_delay, jitter, seed=i)
        assert min(np.diff(sched.shot_times)) >= vol.geometry.record_length
        identity &= np.array_equal(extract_blended(blend(vol, sched)).samples, vol.samples)

    g = SurveyGeometry(2, 1, 1200, 0.001)
    s = np.zeros(g.shape)
    s[0, 0, 700] = 1.0
    s[1, 0, 100] = 2.0
    out = extract_blended(blend(TraceVolume(g, s), draw_schedule(2, 0.6, 0.0, seed=0))).samples
    # shot 1 starts 600 samples after shot 0: each spike lands in the other window
    expected = s.copy()
    expected[0, 0, 700] += 2.0
    expected[1, 0, 100] += 1.0
    impulse = np.array_equal(out, expected)
    elapsed = time.perf_counter() - t
    record("4 blending round trip", identity and impulse and elapsed < 10,
           f"10-volume identity {identity}, impulse superposition {impulse}, {elapsed:.2f}s")


# ----------------------------------------------------------------------------- 5


def test_c05_nmo_flattening():
    t = time.perf_counter()
    dt, nt = 0.001, 2000
    offsets = np.linspace(0.0, 1000.0, 41)
    worst = 0
    for profile in (DEFAULT_PROFILE, VelocityProfile(((0.0, 1800.0),)), VelocityProfile(((0.2, 1500.0), (1.5, 2600.0)))):
        for t0 in (0.4, 0.8, 1.5):
            traces = np.zeros((len(offsets), nt))
            for i, x in enumerate(offsets):
                tx = nmo_times(np.array([t0]), x, profile)[0]
                traces[i] = ricker(np.arange(nt) * dt - tx, 30.0)
            corrected = nmo_correct(CmpGather(0, offsets, traces, dt), profile)
            peaks = np.argmax(corrected.traces, axis=1)
            worst = max(worst, int(np.max(np.abs(peaks - round(t0 / dt)))))
    elapsed = time.perf_counter() - t
    record("5 NMO flattening", worst <= 1 and elapsed < 10,
           f"max misalignment {worst} sample(s) over 3 profiles x 3 t0 x 41 offsets, {elapsed:.2f}s")


# ----------------------------------------------------------------------------- 6


def test_c06_tiling_identity():
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for shape in [(224, 224), (300, 290), (500, 1201)]:
        g = SurveyGeometry(shape[0], 3, shape[1], 0.001)
        vol = TraceVolume(g, rng.normal(size=g.shape))
        stack = assemble_channel_stack(vol, 1, 1)
        est = denoise_gather(lambda b: b[:, 1], stack, plan_tiles(*shape, 224, 56), batch_size=64)
        worst = max(worst, float(np.max(np.abs(est - stack.center))))
    elapsed = time.perf_counter() - t
    record("6 tiling identity", worst <= 1e-6 and elapsed < 30, f"max abs err {worst:.2e}, {elapsed:.2f}s")


# ----------------------------------------------------------------------------- 7


def test_c07_gradient_check():
    t = time.perf_counter()
    cfg = UNetConfig(in_channels=3, **TINY_CONFIG)
    model = build_model(cfg, load_pretrained_fixture(cfg.base_width), seed=0).double()
    model.train()
    rng = np.random.default_rng(7)
    x = torch.from_numpy(rng.normal(size=(2, 3, 32, 32)))
    y = torch.from_numpy(rng.normal(size=(2, 1, 32, 32)))

    def loss():
        return torch.nn.functional.mse_loss(model(x), y)

    model.zero_grad()
    loss().backward()
    params = [p for p in model.parameters()]
    ends = np.cumsum([p.numel() for p in params])
    eps, worst = 1e-6, 0.0
    picks = rng.choice(ends[-1], 150, replace=False)
    for flat in picks:
        i = int(np.searchsorted(ends, flat, side="right"))
        j = int(flat - (ends[i - 1] if i else 0))
        p = params[i]
        analytic = p.grad.view(-1)[j].item()
        with torch.no_grad():
            v = p.view(-1)[j].item()
            p.view(-1)[j] = v + eps
            plus = loss().item()
            p.view(-1)[j] = v - eps
            minus = loss().item()
            p.view(-1)[j] = v
        numeric = (plus - minus) / (2 * eps)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    elapsed = time.perf_counter() - t
    record("7 gradient check", worst <= 1e-4 and elapsed < 120,
           f"{len(picks)} parameters, max rel err {worst:.2e}, {elapsed:.1f}s")


# ----------------------------------------------------------------------------- 8


def overfit_run() -> list[EpochLog]:
    cfg = UNetConfig(in_channels=3, **TINY_CONFIG)
    model = build_model(cfg, load_pretrained_fixture(cfg.base_width), seed=0)
    rng = np.random.default_rng(8)
    samples = []
    for _ in range(8):
        x = rng.normal(size=(3, 32, 32))
        target = x[1] - gaussian_filter1d(x[1], 2.0, axis=-1)  # a learnable local high-pass
        samples.append(TrainingSample(x.astype(np.float32), target.astype(np.float32), 1.0))
    sched = TrainSchedule(frozen_epochs=0, main_epochs=200, lr_min=1e-2, lr_max=1e-2, batch_size=4)
    return train(model, samples, sched, seed=8).history


@pytest.fixture(scope="module")
def overfit_history():
    t = time.perf_counter()
    return overfit_run(), time.perf_counter() - t


def test_c08_overfit(overfit_history):
    history, elapsed = overfit_history
    first, last = history[0].train_mse, history[-1].train_mse
    record("8 overfit smoke", len(history) == 200 and last < 1e-2 and elapsed < 300,
           f"train MSE {first:.3f} -> {last:.4f} in 200 epochs, {elapsed:.1f}s")


# ----------------------------------------------------------------------------- 9-11


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    manifest = parse_manifest(DESK_MANIFEST)
    manifest.sections["run"]["out"] = str(out)
    t = time.perf_counter()
    results = run_experiment(manifest, log_fn=lambda *_: None)
    return manifest, results, time.perf_counter() - t


def test_c09_desk_deblending(desk):
    manifest, results, elapsed = desk
    (survey, snr_in, snr_out), = results["snr"]
    ok = snr_out >= snr_in + 6.0 and snr_in <= 3.0 and elapsed < 3600
    record("9 desk deblending", ok,
           f"held-out survey {survey}: SNR {snr_in:.2f} dB -> {snr_out:.2f} dB "
           f"(gain {snr_out - snr_in:.2f} dB), {elapsed / 60:.1f} min")


@pytest.fixture(scope="module")
def sweep(desk):
    manifest, _, _ = desk
    m = parse_manifest(manifest.to_ini())
    m.sections["run"]["stages"] = "sweep"
    t = time.perf_counter()
    rows = run_experiment(m, log_fn=lambda *_: None)["sweep"]
    return m, rows, time.perf_counter() - t


def test_c10_neighbor_sweep(sweep):
    _, rows, elapsed = sweep
    summary = sweep_summary(rows)
    reps = {k: v["n_ok"] for k, v in summary.items()}
    ok = (summary[1]["median"] < summary[0]["median"] and min(reps.values()) >= 5 and elapsed < 5400)
    cells = ", ".join(f"k={r.k}:{r.best_valid_mse:.4f}" for r in rows)
    record("10 neighbor sweep", ok,
           f"median best valid MSE k=0 {summary[0]['median']:.5f}, k=1 {summary[1]['median']:.5f} "
           f"({reps} reps; {cells}), {elapsed / 60:.1f} min")


def test_c11_reproducibility(desk, sweep, overfit_history):
    manifest, _, _ = desk
    m_sweep, rows, _ = sweep

    def rel(a, b):
        return abs(a - b) / max(abs(b), 1e-30)

    errs = {}
    again = overfit_run()
    errs["overfit"] = max(rel(a.train_mse, b.train_mse) for a, b in zip(again, overfit_history[0]))

    out = manifest.out
    n, nv = manifest.n_models, manifest.n_valid
    pairs = [TrainingPair(io.read_volume(out / "surveys" / f"blended_{i:03d}.svol"),
                          io.read_volume(out / "surveys" / f"clean_{i:03d}.svol")) for i in range(n)]
    train_pairs, valid_pairs = pairs[: n - nv], pairs[n - nv:]

    rerun = fit_denoiser(train_pairs, valid_pairs, manifest.k, manifest.unet(), manifest.schedule(),
                         manifest.augment(), derive_seed(manifest.seed, 30),
                         manifest.get("train", "pretrained", "fixture"))
    import csv

    with open(out / "history.csv") as f:
        saved = [(float(r["train_mse"]), float(r["valid_mse"])) for r in csv.DictReader(f)]
    errs["desk training"] = max(max(rel(h.train_mse, a), rel(h.valid_mse, b))
                                for h, (a, b) in zip(rerun.history, saved))

    row = next(r for r in rows if r.k == 1)
    cell = neighbor_sweep(train_pairs, valid_pairs, [1], 1, m_sweep.unet(),
                          m_sweep.schedule(main_epochs=int(m_sweep.get("sweep", "main_epochs", 10))),
                          m_sweep.augment(), derive_seed(m_sweep.seed, 40),
                          m_sweep.get("train", "pretrained", "fixture"))[0]
    errs["sweep row"] = rel(cell.best_valid_mse, row.best_valid_mse)
    worst = max(errs.values())
    record("11 reproducibility", worst <= 1e-6,
           ", ".join(f"{k} max rel diff {v:.1e}" for k, v in errs.items()))


# ----------------------------------------------------------------------------- 12


def test_c12_format_round_trip(tmp_path):
    t = time.perf_counter()
    rng = np.random.default_rng(12)
    failures = []
    for i in range(100):
        ns, nr, nt = (int(v) for v in rng.integers(1, 6, 3))
        g = SurveyGeometry(ns, nr, nt, float(rng.uniform(1e-4, 0.01)), float(rng.uniform(1, 50)),
                           float(rng.uniform(1, 50)), float(rng.uniform(0, 500)), bool(rng.integers(2)))
        bits = rng.integers(0, 2**32, g.shape, dtype=np.uint64).astype(np.uint32)
        samples = bits.view(np.float32)
        samples[~np.isfinite(samples)] = 0.0
        vol = TraceVolume(g, samples)
        io.write_volume(vol, tmp_path / "v.svol")
        back = io.read_volume(tmp_path / "v.svol")
        if back.geometry != g or back.samples.tobytes() != vol.samples.tobytes():
            failures.append(f"volume {i}")

        speeds = rng.uniform(1400, 5000, tuple(rng.integers(1, 9, 2))).astype(np.float32)
        model = VelocityModel(float(rng.uniform(0.5, 10)), speeds)
        io.write_velocity_model(model, tmp_path / "m.svol")
        mb = io.read_velocity_model(tmp_path / "m.svol")
        if mb.dx != model.dx or mb.wave_speed.tobytes() != model.wave_speed.tobytes():
            failures.append(f"model {i}")

        per_shot = tuple(float(v) for v in rng.normal(0, 20, int(rng.integers(1, 6))))
        io.write_snr(SnrReport(per_shot, float(np.mean(per_shot))), tmp_path / "s.csv")
        if io.read_snr(tmp_path / "s.csv") != (list(per_shot), float(np.mean(per_shot))):
            failures.append(f"snr {i}")

        rows = [SweepRow(int(rng.integers(0, 9)), j, int(rng.integers(0, 2**31)), float(rng.exponential()),
                         "ok") for j in range(int(rng.integers(0, 4)))]
        io.write_sweep(rows, tmp_path / "w.csv")
        if io.read_sweep(tmp_path / "w.csv") != rows:
            failures.append(f"sweep {i}")

        if i % 10 == 0:
            cfg = UNetConfig(in_channels=int(rng.choice([1, 3, 5])), **TINY_CONFIG)
            net = build_model(cfg, seed=i)
            with torch.no_grad():
                for buf in net.buffers():
                    if buf.dtype.is_floating_point:
                        buf.copy_(torch.from_numpy(rng.uniform(0.5, 2, tuple(buf.shape)).astype(np.float32)))
            io.save_checkpoint(net, tmp_path / "c.sdnm")
            nb = io.load_checkpoint(tmp_path / "c.sdnm")
            ref = net.state_dict()
            if nb.config != cfg or any(not torch.equal(v, ref[k]) for k, v in nb.state_dict().items()):
                failures.append(f"checkpoint {i}")
    elapsed = time.perf_counter() - t
    record("12 format round trip", not failures and elapsed < 5,
           f"100 instances each of volume/model/SNR/sweep files, 10 checkpoints; "
           f"failures {failures or 'none'}, {elapsed:.2f}s")
