import itertools
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from conflab.space import FnTable, ObservationSpace

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def brute_orbit_mean(table, seq):
    """Average over all N! reorderings of ``seq`` (independent of the library's bag machinery)."""
    vals = [float(table.values[tuple(p)]) for p in itertools.permutations(seq)]
    return sum(vals) / len(vals)


def brute_iid_expectation(table, q):
    total = 0.0
    for seq in itertools.product(range(table.space.z_card), repeat=table.N):
        w = math.prod(q[z] for z in seq)
        if w > 0:
            total += w * float(table.values[seq])
    return total


def grid_sup_1d(table, points=20001):
    """Dense 1-D scan for z_card = 2 (independent of the optimizer)."""
    best = 0.0
    for t in np.linspace(0.0, 1.0, points):
        best = max(best, brute_iid_expectation(table, (1 - t, t)))
    return best


def table_from_dict(space, n, mapping, default=0.0):
    return FnTable.from_function(space, n, lambda s: mapping.get(s, default))


@pytest.fixture
def binary_space():
    return ObservationSpace(1, 2)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
