"""Shared fixtures: solved reference points reused across the suite."""

import pytest
from hypothesis import settings

import parakkt

settings.register_profile("suite", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("suite")

ACCEPTANCE_LINES = []


def solve_builtin(name, nodes, n_levels, tol):
    spec = parakkt.builtin_problem(name)
    grid = parakkt.SpatialGrid(extents=spec.extents, nodes=nodes)
    timegrid = parakkt.TimeGrid(n_levels=n_levels, horizon=spec.horizon)
    options = parakkt.OptimizerOptions(tol_kkt=tol)
    point, trace, report = parakkt.solve_ocp(spec, grid, timegrid, options)
    return spec, point, trace, report


@pytest.fixture(scope="session")
def tracking_bundle():
    """Box-constrained tracking problem solved tightly on a 33x65 grid."""
    return solve_builtin("tracking_box_1d", (33,), 65, 1e-10)


@pytest.fixture(scope="session")
def feasible_bundle():
    """Problem whose constraint never activates, solved on a 17x17 grid."""
    return solve_builtin("strictly_feasible_1d", (17,), 17, 1e-10)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
