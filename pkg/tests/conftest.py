import numpy as np
import pytest

from rdcflow.grid import Grid
from rdcflow.integrate import IntegratorConfig, sample_attractor
from rdcflow.model import builtin

# short runs: enough to leave the initial transient, cheap on one core
QUICK = IntegratorConfig(t_transient=4.0, t_sample=2.0, n_snapshots=6, n_trajectories=2, n_hull=16)

_cache = {}


def quick_sample(name, n_modes=128, config=QUICK):
    key = (name, n_modes, config)
    if key not in _cache:
        sys = builtin(name)
        _cache[key] = (sys, sample_attractor(sys, config, Grid(n_modes)))
    return _cache[key]


@pytest.fixture(scope="session")
def burgers_sample():
    return quick_sample("scalar_burgers")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash[ACCEPTANCE]
    state = {}

    def record(number: int, title: str, checks: dict, detail: str = ""):
        ok = all(checks.values())
        failed = [name for name, passed in checks.items() if not passed]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {title}"
        if detail:
            line += f"  [{detail}]"
        if failed:
            line += f"  failing: {', '.join(failed)}"
        lines[number] = line
        state["done"] = True
        print(line)
        assert ok, line

    yield record
    if not state:
        number = int(request.node.name.split("_")[1])
        lines.setdefault(number, f"FAIL  criterion {number:2d}  raised before reaching its verdict")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
