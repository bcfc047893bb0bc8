import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sokid.dataset import SnapshotEnsemble, TimeGrid, TrajectoryGroup  # noqa: E402
from sokid.simulator import (SimPlan, builtin_sde, draw_initial_conditions,  # noqa: E402
                             simulate_ensemble)

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_ensemble(rng, g=None, n=None, k=None, spread=0.5, kmin=2):
    """Small ensemble with random times and Gaussian-walk snapshots."""
    g = g or int(rng.integers(1, 3))
    n = n or int(rng.integers(1, 6))
    times = np.cumsum(np.concatenate([[rng.uniform(-1, 1)], rng.uniform(0.05, 0.5, n)]))
    groups = []
    for _ in range(g):
        kk = k or int(rng.integers(kmin, 5))
        ic = rng.uniform(-1, 1)
        steps = rng.normal(0, spread, (kk, n))
        snaps = ic + np.concatenate([np.zeros((kk, 1)), np.cumsum(steps, axis=1)], axis=1)
        groups.append(TrajectoryGroup(ic, snaps))
    return SnapshotEnsemble(TimeGrid(times), tuple(groups))


def quadratic_ensemble(seed=1, num_times=100, k=10):
    ics = draw_initial_conditions(10, 0.1, 0.9, seed)
    plan = SimPlan(TimeGrid.uniform(0.0, 1.0, num_times), tuple(ics), k, 10, seed)
    return simulate_ensemble(builtin_sde("paper_quadratic"), plan)


@pytest.fixture(scope="session")
def quad_ens():
    return quadratic_ensemble(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
