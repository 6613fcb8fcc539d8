import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def oracles():
    return json.loads((DATA / "oracles.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict = {}


class Criterion:
    def __init__(self, key: str, title: str):
        self.key, self.title = key, title

    def check(self, passed: bool, detail: str) -> None:
        ACCEPTANCE.setdefault(self.key, []).append((bool(passed), self.title, detail))
        line = f"{'PASS' if passed else 'FAIL'} {self.key} {self.title}: {detail}"
        print(line)
        assert passed, line


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        parts = ACCEPTANCE[key]
        ok = all(p[0] for p in parts)
        detail = " | ".join(f"{t}: {d}" for _, t, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key} {detail}")
