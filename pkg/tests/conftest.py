import numpy as np
import pytest

from twingrid import make_operator
from twingrid.phantom_io import NoiseSpec, add_noise, shepp_logan
from twingrid.projector import forward_project

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 11


def noisy_problem(n, views, noise=0.05, seed=7):
    truth = shepp_logan(n)
    op = make_operator(n, views, pixel_size=truth.pixel_size)
    clean = forward_project(op, truth)
    noisy, sigma = add_noise(clean, NoiseSpec(noise, seed))
    return truth, op, noisy, sigma


@pytest.fixture(scope="session")
def problem64():
    return noisy_problem(64, 60)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in r.nodeid for r in terminalreporter.stats.get("passed", []) +
              terminalreporter.stats.get("failed", []) + terminalreporter.stats.get("error", []))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        ok, detail = ACCEPTANCE.get(k, (False, "not evaluated"))
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
