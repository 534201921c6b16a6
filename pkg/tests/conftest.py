import numpy as np
import pytest

from fbsdep.model import TimeGrid
from fbsdep.noise import sample_noise
from fbsdep.presets import get_preset


@pytest.fixture(scope="session")
def lq_spec():
    return get_preset("lq-scalar").spec


@pytest.fixture(scope="session")
def lq_bundle(lq_spec):
    return sample_noise(TimeGrid(12.0, 600), lq_spec.marks, 2000, 11)


def small_bundle(spec, horizon=2.0, n_steps=100, n_paths=500, seed=1):
    return sample_noise(TimeGrid(horizon, n_steps), spec.marks, n_paths, seed)


def within(value, target, stderr, k=3.0, floor=0.0):
    return abs(value - target) <= k * stderr + floor


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Print and remember one PASS/FAIL line for the acceptance summary."""
    line = f"CRITERION {number:>3} {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
