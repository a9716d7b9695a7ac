import numpy as np
import pytest
import torch

from seisdeblend.survey import SurveyGeometry, TraceVolume

torch.set_num_threads(1)

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def make_volume(n_shots=4, n_receivers=5, n_time=16, seed=0, **kw) -> TraceVolume:
    rng = np.random.default_rng(seed)
    g = SurveyGeometry(n_shots, n_receivers, n_time, kw.pop("dt", 0.001), **kw)
    return TraceVolume(g, rng.normal(size=g.shape))


@pytest.fixture
def volume():
    return make_volume()
