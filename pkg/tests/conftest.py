import numpy as np
import pytest

from contacthj import SolverConfig
from contacthj.lagrangian import DomainDescriptor, free_particle, make_discounted, make_nonlinear_concave, mechanical

COS = [[1, 1.0, 0.0]]


@pytest.fixture
def domain():
    return DomainDescriptor()


@pytest.fixture
def cos_L0(domain):
    return mechanical(domain, COS)


@pytest.fixture
def discounted(cos_L0):
    return make_discounted(cos_L0, 1.0)


@pytest.fixture
def nonlinear(cos_L0):
    return make_nonlinear_concave(cos_L0, 1.0, 0.5)


@pytest.fixture
def free_discounted(domain):
    return make_discounted(free_particle(domain), 1.0)


@pytest.fixture
def cfg():
    return SolverConfig(seed=1234)


@pytest.fixture
def small_cfg():
    return SolverConfig(seed=1234, resolution=8, curve_segments=8, substeps=2, random_starts=0)


def random_lifted(rng, B, N, d=1, scale=0.3):
    """Random lifted node arrays: a straight trend plus a wiggle."""
    base = rng.uniform(0, 1, size=(B, 1, d))
    trend = rng.uniform(-1, 1, size=(B, 1, d)) * np.linspace(0, 1, N + 1)[None, :, None]
    wiggle = scale * rng.standard_normal((B, N + 1, d)) / np.sqrt(N)
    return base + trend + wiggle


ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str, seconds: float | None = None):
    """Register one acceptance line; the terminal summary prints them in order."""
    took = "" if seconds is None else f" [{seconds:.0f} s]"
    ACCEPTANCE.setdefault(criterion, []).append(f"{'PASS' if ok else 'FAIL'} {detail}{took}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        lines = ACCEPTANCE[k]
        status = "PASS" if all(line.startswith("PASS") for line in lines) else "FAIL"
        terminalreporter.write_line(f"AC{k} {status}: " + "; ".join(line.split(" ", 1)[1] for line in lines))
