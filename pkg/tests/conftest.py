import numpy as np
import pytest

from chores_ce.market import GeneratorConfig, MarketInstance, generate_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_instance(rng, n=None, m=None, dist=None, max_dim=6):
    n = int(rng.integers(1, max_dim + 1)) if n is None else n
    m = int(rng.integers(1, max_dim + 1)) if m is None else m
    dist = dist or ["uniform", "lognormal", "exponential", "integer"][int(rng.integers(4))]
    return generate_instance(GeneratorConfig(dist, n, m, seed=int(rng.integers(2**31))))


@pytest.fixture
def two_by_two():
    return MarketInstance(np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([1.0, 1.0]))


@pytest.fixture
def single_agent():
    # analytic equilibrium p = B d / sum(d) = (1, 3), x = (1, 1)
    return MarketInstance(np.array([[1.0, 3.0]]), np.array([4.0]))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name == "acceptance" and rep.when == "call":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
