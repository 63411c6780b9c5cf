import numpy as np
import pytest

from hoplab.environment import MarkDistribution, sample_diluted_lattice, sample_poisson_marked
from hoplab.microscale import build_generator, from_edges
from hoplab.rates import RateKernel

UNIFORM_MARKS = MarkDistribution.uniform(-0.5, 0.5)


def lattice_generator(d, L, eps=1.0, seed=0):
    """Full Z^d torus with unit nearest-neighbour rates."""
    cfg = sample_diluted_lattice(d, L, 1.0, MarkDistribution.constant(0.0), seed)
    return build_generator(cfg, RateKernel.constant_range(1.0, 1.0), eps)


def ring_generator(rates, eps=1.0):
    """1D periodic chain with unit spacing and the given edge conductances."""
    n = len(rates)
    pts = np.arange(n, dtype=float)[:, None]
    a = np.arange(n)
    b = (a + 1) % n
    i, j = np.minimum(a, b), np.maximum(a, b)
    disp = np.where(b > a, 1.0, -1.0)[:, None]
    return from_edges(eps, 1, float(n), pts, i, j, np.asarray(rates, dtype=float), disp)


def two_node(c, eps=1.0):
    return from_edges(eps, 1, 4.0, np.array([[0.0], [1.0]]), [0], [1], [c], [[1.0]])


def mott_cloud(n_target, d=2, m=4.0, seed=0, gamma=2.0, beta=1.0, eps=1.0):
    L = (n_target / m) ** (1.0 / d)
    cfg = sample_poisson_marked(d, L, m, UNIFORM_MARKS, seed)
    return build_generator(cfg, RateKernel.mott(gamma, beta), eps)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mott_kernel():
    return RateKernel.mott(2.0, 1.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
