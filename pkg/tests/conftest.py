import contextlib
import math

import numpy as np
import pytest
from hypothesis import settings

from dcepk.aif import plasma_curve
from dcepk.core import AcqParams, PlasmaCurve

settings.register_profile("dcepk", max_examples=60, deadline=None)
settings.load_profile("dcepk")


@pytest.fixture
def acq():
    return AcqParams(0.0028, math.radians(10.0), 3.47, 6.5, 65, 4)


@pytest.fixture
def cp(acq):
    return plasma_curve(acq)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def constant_cp(value, n, dt):
    return PlasmaCurve(np.full(n, float(value)), np.arange(n) * float(dt))


# acceptance criteria: one PASS/FAIL line each, printed after the run --------------

ACCEPTANCE = pytest.StashKey[dict]()
N_CRITERIA = 10


class AcceptanceLog:
    def __init__(self, store: dict):
        self.store = store

    def record(self, number: int, part: str, ok: bool, detail: str) -> bool:
        self.store.setdefault(number, []).append((part, bool(ok), detail))
        return bool(ok)

    @contextlib.contextmanager
    def guard(self, number: int, part: str = ""):
        """Record a FAIL for ``number`` if the body raises before recording."""
        before = len(self.store.get(number, []))
        try:
            yield
        except BaseException as exc:
            if len(self.store.get(number, [])) == before:
                self.record(number, part, False, f"error {type(exc).__name__}: {exc}"[:200])
            raise


@pytest.fixture
def acceptance(request):
    return AcceptanceLog(request.config.stash.setdefault(ACCEPTANCE, {}))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        parts = store.get(n)
        if not parts:
            terminalreporter.write_line(f"----  criterion {n:2d}: not run in this session")
            continue
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{p[0]}: {p[2]}" if p[0] else p[2] for p in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {detail}")
