from pathlib import Path

import numpy as np
import pytest

from bsgd.baselines import lsqr_solve
from bsgd.phantoms import add_noise, shepp_logan
from bsgd.projector import build_geometry, system_matrix
from bsgd.system import BlockSystem

PRESETS = Path(__file__).resolve().parent.parent / "presets"


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one ``criterion N: PASS/FAIL`` line for the terminal summary."""
    def _report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return passed
    return _report


@pytest.fixture(scope="session")
def fan16():
    """The 1080 x 256 fan-beam system (K=16, 36 angles, 30 elements)."""
    geom = build_geometry(volume_side=16)
    return geom, system_matrix(geom)


@pytest.fixture(scope="session")
def fan8():
    geom = build_geometry(detector_elements=16, angles=np.arange(0, 360, 20), volume_side=8,
                          source_to_center=30, center_to_detector=30)
    return geom, system_matrix(geom)


def noisy_problem(geom, A, snr=17.5, seed=0):
    x_true = shepp_logan(geom.volume_side).values
    y = add_noise(A @ x_true, snr, seed)
    return x_true, y


@pytest.fixture(scope="session")
def problem16(fan16):
    """``(system, x_true, y, x_lsq)`` with M=4, N=2 on the K=16 system."""
    geom, A = fan16
    system = BlockSystem.build(geom, 4, 2, tiles_per_angle=1, A=A)
    x_true, y = noisy_problem(geom, A)
    return system, x_true, y, lsqr_solve(A, y).x
