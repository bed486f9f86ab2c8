import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from csim.sysmodel import LotkaVolterraSystem, MayLeonardSystem, weak_coupling_lv

settings.register_profile("csim", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=30)
settings.load_profile("csim")

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def record_criterion():
    """Record one acceptance criterion as PASS/FAIL with a short detail line."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        ACCEPTANCE[number] = (title, "PASS" if ok else "FAIL", detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}" + (f" ({detail})" if detail else ""))


@pytest.fixture
def wlv():
    return weak_coupling_lv()


@pytest.fixture
def ml():
    return MayLeonardSystem(1.5, 0.8)


def random_lv(rng, n, lo=0.05, hi=2.0):
    b = rng.uniform(0.5, 2.0, n)
    a = rng.uniform(lo, hi, (n, n))
    a[np.diag_indices(n)] = rng.uniform(0.8, 2.0, n)
    return LotkaVolterraSystem(b, a)
