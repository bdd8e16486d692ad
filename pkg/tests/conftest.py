import numpy as np
import pytest
from hypothesis import settings

from mipp.data import load_digits8x8
from mipp.experiments import desk_train_config
from mipp.models import build_model, train_classifier

settings.register_profile("mipp", deadline=None, max_examples=40)
settings.load_profile("mipp")


@pytest.fixture(scope="session")
def digits():
    return load_digits8x8(0)


@pytest.fixture(scope="session")
def trained_digits(digits):
    model, _ = train_classifier(build_model("dense-digits", 0), digits, 20, desk_train_config(0))
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}
CRITERIA = 9


@pytest.fixture(scope="session")
def acceptance():
    def record(number: int, name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = f"criterion {number} {name}: {'PASS' if passed else 'FAIL'} ({detail})"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, CRITERIA + 1):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n}: FAIL (did not produce a result)"))
