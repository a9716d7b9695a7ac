import json

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, given, settings, strategies as st

from seisdeblend import io
from seisdeblend.denoiser import TINY_CONFIG, UNetConfig, build_model
from seisdeblend.errors import FormatError
from seisdeblend.experiment import SweepRow
from seisdeblend.metrics import SnrReport
from seisdeblend.survey import SurveyGeometry, TraceVolume
from seisdeblend.synthetics import VelocityModel

finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)
settings.register_profile("io", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])


@st.composite
def volumes(draw):
    ns, nr, nt = draw(st.integers(1, 4)), draw(st.integers(1, 4)), draw(st.integers(1, 8))
    g = SurveyGeometry(ns, nr, nt, draw(st.floats(1e-4, 0.01)), draw(st.floats(0.5, 50)),
                       draw(st.floats(0.5, 50)), draw(st.floats(0, 500)), draw(st.booleans()))
    data = draw(st.lists(finite32, min_size=ns * nr * nt, max_size=ns * nr * nt))
    return TraceVolume(g, np.array(data, dtype=np.float32).reshape(g.shape))


def test_small_volume_round_trip(tmp_path):
    g = SurveyGeometry(1, 1, 4, 0.002, 5.0, 5.0, 25.0)
    vol = TraceVolume(g, np.array([[[0.0, 1.0, -1.0, 0.5]]], dtype=np.float32))
    io.write_volume(vol, tmp_path / "a.svol")
    back = io.read_volume(tmp_path / "a.svol")
    assert back.geometry == g
    np.testing.assert_array_equal(back.samples, vol.samples)
    assert (tmp_path / "a.svol").read_bytes()[:4] == b"SVL1"


@settings(settings.get_profile("io"))
@given(volumes())
def test_volume_round_trip(tmp_path, vol):
    io.write_volume(vol, tmp_path / "v.svol")
    back = io.read_volume(tmp_path / "v.svol")
    assert back.geometry == vol.geometry
    assert back.samples.tobytes() == vol.samples.tobytes()


@pytest.mark.parametrize("field,mutate", [
    ("magic", lambda b: b"XVL1" + b[4:]),
    ("version", lambda b: b"SVL2" + b[4:]),
    ("payload length", lambda b: b[:-4]),
    ("payload length", lambda b: b + b"\0\0\0\0"),
    ("header", lambda b: b[:10]),
])
def test_volume_format_errors(tmp_path, volume, field, mutate):
    io.write_volume(volume, tmp_path / "v.svol")
    (tmp_path / "v.svol").write_bytes(mutate((tmp_path / "v.svol").read_bytes()))
    with pytest.raises(FormatError, match=field):
        io.read_volume(tmp_path / "v.svol")


@settings(settings.get_profile("io"))
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.5, 20), st.integers(0, 2**31))
def test_velocity_model_round_trip(tmp_path, nz, nx, dx, seed):
    speeds = np.random.default_rng(seed).uniform(1500, 4000, (nz, nx)).astype(np.float32)
    model = VelocityModel(dx, speeds)
    io.write_velocity_model(model, tmp_path / "m.svol")
    back = io.read_velocity_model(tmp_path / "m.svol")
    assert back.dx == dx
    assert back.wave_speed.tobytes() == speeds.tobytes()


def _perturbed_tiny(seed):
    model = build_model(UNetConfig(in_channels=3, **TINY_CONFIG), seed=seed)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for buf in model.buffers():
            if buf.dtype.is_floating_point:
                buf.add_(torch.rand(buf.shape, generator=gen))
    return model


def test_checkpoint_round_trip(tmp_path):
    for seed in range(3):
        model = _perturbed_tiny(seed)
        io.save_checkpoint(model, tmp_path / "c.sdnm")
        back = io.load_checkpoint(tmp_path / "c.sdnm")
        assert back.config == model.config
        ref = model.state_dict()
        for name, t in back.state_dict().items():
            assert torch.equal(t, ref[name]), name
        x = torch.randn(1, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(back(x), model.eval()(x))


def test_checkpoint_errors(tmp_path):
    io.save_checkpoint(_perturbed_tiny(0), tmp_path / "c.sdnm")
    raw = (tmp_path / "c.sdnm").read_bytes()
    for data, field in [(b"XDNM" + raw[4:], "magic"), (raw[:4] + b"\x02" + raw[5:], "version"),
                        (raw[:-8], "truncated"), (raw + b"\0", "trailing")]:
        (tmp_path / "bad.sdnm").write_bytes(data)
        with pytest.raises(FormatError, match=field):
            io.load_checkpoint(tmp_path / "bad.sdnm")


@settings(settings.get_profile("io"))
@given(st.lists(st.floats(-200, 200, allow_nan=False), min_size=1, max_size=10))
def test_snr_csv_round_trip(tmp_path, vals):
    report = SnrReport(tuple(vals), float(np.mean(vals)))
    io.write_snr(report, tmp_path / "s.csv")
    per_shot, mean = io.read_snr(tmp_path / "s.csv")
    assert per_shot == list(vals) and mean == report.mean_db


@settings(settings.get_profile("io"))
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 50), st.integers(0, 2**31),
                          st.floats(0, 10, allow_nan=False), st.sampled_from(["ok", "diverged"])),
                max_size=8))
def test_sweep_csv_round_trip(tmp_path, raw_rows):
    rows = [SweepRow(*r) for r in raw_rows]
    io.write_sweep(rows, tmp_path / "s.csv")
    assert io.read_sweep(tmp_path / "s.csv") == rows
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "k,repetition,seed,best_valid_mse,status"


def test_history_csv(tmp_path):
    from seisdeblend.denoiser import EpochLog

    io.write_history([EpochLog(0, 1, 0.5, 0.25), EpochLog(1, 2, 0.1, float("nan"))], tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,phase,train_mse,valid_mse" and lines[1] == "0,1,0.5,0.25"


@settings(settings.get_profile("io"))
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_pgm(tmp_path, h, w, seed):
    img = np.random.default_rng(seed).normal(size=(h, w))
    io.write_pgm(img, tmp_path / "a.pgm")
    grey = io.read_pgm(tmp_path / "a.pgm")
    assert grey.shape == (w, h)  # time runs down the image
    assert (tmp_path / "a.pgm").read_bytes()[:2] == b"P5"
    c = 3 * img.std()
    if c > 0:
        expected = np.rint((np.clip(img.T, -c, c) + c) / (2 * c) * 255)
        np.testing.assert_array_equal(grey, expected)
