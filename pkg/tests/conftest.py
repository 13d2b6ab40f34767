import numpy as np
import pytest

from prfgames.model import Activation, DemandDistribution, PublishersGame, SemiMetric


def random_game(rng, n=3, s=3, k=3, family="linear", param=None, lam=0.5, weights=None):
    atoms = rng.random((s, k))
    demand = DemandDistribution.uniform(atoms) if weights is None else DemandDistribution(atoms, weights)
    return PublishersGame(n, k, SemiMetric(), Activation(family, param), demand, rng.random((n, k)),
                          np.full(n, lam))


def fd_gradient(func, x, h=1e-5):
    """Central differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for c in range(x.size):
        e = np.zeros_like(x)
        e[c] = h
        out[c] = (func(x + e) - func(x - e)) / (2 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (sort key, line) per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
