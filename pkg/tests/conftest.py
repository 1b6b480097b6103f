import numpy as np
import pytest

from sprint import numkernel as nk
from sprint.synthetic import BlobSpec, make_synthetic

# acceptance criteria append (label, passed, detail) here; printed at session end
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params(rng):
    return nk.init_encoder(6, (8, 8), 4, rng)


@pytest.fixture(scope="session")
def blobs():
    return make_synthetic(BlobSpec())


@pytest.fixture(scope="session")
def small_blobs():
    return make_synthetic(BlobSpec(n_per_class=80, dim=8))
