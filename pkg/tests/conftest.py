import numpy as np
import pytest

from cvoc import testsignals as ts
from cvoc.synthesis import analyze


FS = 16000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def vowel():
    return ts.vowel(130.0, 1.0, formants="a", noise=0.05, seed=1)


@pytest.fixture(scope="session")
def vowel_bundle(vowel):
    return analyze(vowel, with_cnm=True)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE = {}


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.setdefault(n, []).append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        for line in ACCEPTANCE[n]:
            terminalreporter.write_line(line)
