import time

import numpy as np
import pytest

from dplab.linops import assemble_Lc
from dplab.profile import WaveParams, build_profile
from dplab.spectral import Field, make_grid


def band_limited(grid, rng, max_mode=None, amp=1.0):
    """Random real field with Fourier modes ``|n| <= max_mode`` (default ``N/8``)."""
    max_mode = grid.N // 8 if max_mode is None else max_mode
    coef = np.zeros(grid.N, dtype=complex)
    band = (np.abs(grid.mode_index) <= max_mode) & (grid.mode_index != -grid.N // 2)
    coef[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
    v = np.fft.ifft(coef).real
    return Field(grid, amp * v / np.max(np.abs(v)))


@pytest.fixture(scope="session")
def wave():
    """(c, k) = (3, 1) on the default 4096-point box of half-length 64."""
    return build_profile(WaveParams(3.0, 1.0), make_grid(64.0, 4096))


@pytest.fixture(scope="session")
def wave_lin():
    """(c, k) = (3, 1) on the 1024-point grid used for dense linear algebra."""
    return build_profile(WaveParams(3.0, 1.0), make_grid(64.0, 1024))


@pytest.fixture(scope="session")
def Lc(wave_lin):
    return assemble_Lc(wave_lin)


class Recorder:
    """Observer that keeps per-sample reductions of the evolving field."""

    def __init__(self, wave=None):
        self.wave = wave
        self.t, self.min_u, self.slack = [], [], []
        self.final = None

    def __call__(self, t, u):
        from dplab.stability import apriori_linfty_check, orbital_distance

        self.t.append(t)
        self.min_u.append(float(u.values.min()))
        if self.wave is not None:
            od = orbital_distance(u, self.wave)
            self.slack.append(apriori_linfty_check(u, self.wave, od.x0))
        self.final = u


def _evolve(wave, u0, t_end):
    from dplab import evolution

    rec = Recorder(wave)
    start = time.perf_counter()
    state = evolution.run(u0, wave.k, t_end, 1e-3, 100, observer=rec)
    rec.elapsed = time.perf_counter() - start
    return state, rec


@pytest.fixture(scope="session")
def soliton_run_10(wave):
    return _evolve(wave, wave.phi, 10.0)


@pytest.fixture(scope="session")
def soliton_run_50(wave):
    return _evolve(wave, wave.phi, 50.0)


@pytest.fixture(scope="session")
def perturbed_run_50(wave):
    from dplab.stability import Perturbation, make_perturbed_initial

    u0 = make_perturbed_initial(wave, Perturbation(1e-2, "gaussian", s_matched=True))
    return u0, *_evolve(wave, u0, 50.0)


@pytest.fixture(scope="session")
def sweep_report(wave):
    from dplab.stability import SweepConfig, stability_sweep

    start = time.perf_counter()
    rep = stability_sweep(wave, [1e-3, 3e-3, 1e-2], 50.0, SweepConfig(workers=3))
    rep.elapsed = time.perf_counter() - start
    return rep


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Records one verdict line per acceptance criterion for the terminal summary."""

    def record(number, title, ok, detail):
        ACCEPTANCE_LINES.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
