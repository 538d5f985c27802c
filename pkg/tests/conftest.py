import os
from datetime import date, timedelta

import numpy as np
import pytest

from otseries.data import CityRecord

os.environ.setdefault("POT_BACKEND_DISABLE_PYTORCH", "1")
os.environ.setdefault("POT_BACKEND_DISABLE_JAX", "1")
os.environ.setdefault("POT_BACKEND_DISABLE_TENSORFLOW", "1")
os.environ.setdefault("POT_BACKEND_DISABLE_CUPY", "1")


def make_record(city_id="A", mobility=(1.0, 2.0, 3.0), cases=None, start=date(2020, 3, 1), state="CA"):
    n = len(mobility)
    cases = list(range(n)) if cases is None else list(cases)
    dates = [start + timedelta(days=i) for i in range(n)]
    return CityRecord(city_id, f"County {city_id}", state, dates, list(mobility), cases)


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion; asserts on failure."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
