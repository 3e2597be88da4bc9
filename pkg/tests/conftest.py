import pytest

from conformable_sde.calculus import Alpha, TimeWindow
from conformable_sde.paths import SimulationConfig

SEED = 20261019


def make_config(alpha=0.75, T=1.0, lam=1.0, u0=1.0, n_steps=64, n_paths=2000, seed=SEED, a=0.0, **kw):
    return SimulationConfig(Alpha(alpha), TimeWindow(a, T), lam, u0, n_steps, n_paths, seed, **kw)


@pytest.fixture
def small_config():
    return make_config()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.REPORT, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
