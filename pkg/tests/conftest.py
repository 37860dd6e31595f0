import functools

import numpy as np
import pytest

from hkfem import ElementKind, build_space, build_unit_square_mesh

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def cached_space(level, kind):
    return build_space(build_unit_square_mesh(level), ElementKind.parse(kind))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report_line():
    """Record one acceptance line; all lines are echoed in the terminal summary."""

    def record(text):
        ACCEPTANCE_LINES.append(text)
        print(text)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


PULSE_BASE = dict(alpha=1e-2, k=40.0, beta=5e-3)


@functools.lru_cache(maxsize=None)
def cached_pulse(bc, angle=None, level=5):
    """Level-5 Gaussian pulse run; ``angle=None`` is the beta = 0 control."""
    from hkfem import DirectorField, ProblemConfig
    from hkfem.experiments import solve_pulse

    theta = "matched" if bc == "impedance" else None
    cfg = ProblemConfig(**PULSE_BASE, bc_kind=bc, theta=theta)
    if angle is None:
        cfg = cfg.with_(beta=0.0)
    else:
        cfg = cfg.with_(director=DirectorField.from_angle(angle))
    return solve_pulse(cfg, level=level)
