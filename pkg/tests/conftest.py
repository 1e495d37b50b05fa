"""Shared fixtures and the acceptance-criteria terminal summary."""

from __future__ import annotations

import numpy as np
import pytest

from epirate import forward, presets
from epirate.grids import build_spatial_grid, build_temporal_grid

ACCEPTANCE_LINES: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_LINES):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:02d} {name}: {status}  ({detail})")


@pytest.fixture(scope="session")
def desk17():
    """Small desk problem: 17x17 mesh, 6 measurement steps, no burn-in."""
    tgrid = build_temporal_grid(1.0, 6, 0.05)
    sgrid = build_spatial_grid(0.5, 1.5, 17)
    problem = presets.build_problem({"preset": "gaussian-bumps",
                                     "burn_in": 0.0}, sgrid, 0.01)
    return tgrid, sgrid, problem


@pytest.fixture()
def constant_problem():
    """Spatially constant populations, zero rates and velocities."""
    sgrid = build_spatial_grid(0.5, 1.5, 17)
    n = sgrid.num_nodes
    zq = np.zeros((2, n, n))
    problem = forward.SirProblem(
        f_s=np.full((n, n), 1.5), f_i=np.full((n, n), 0.9),
        f_r=np.full((n, n), 0.4), q_s=zq, q_i=zq, q_r=zq,
        beta_true=np.zeros((n, n)), gamma_true=np.zeros((n, n)),
        c_floor=0.5)
    return sgrid, problem
