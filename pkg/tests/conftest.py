import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: dict = {}

from echolocate.arrays import ArraySpec  # noqa: E402
from echolocate.encode import HoaEncoder  # noqa: E402
from echolocate.geometry import RoomScene  # noqa: E402

REFERENCE_DIMS = (4.0, 5.0, 2.6)
REFERENCE_SOURCE = (3.0, 3.0, 1.5)
REFERENCE_ARRAY = (2.0, 2.0, 1.5)


@pytest.fixture(scope="session")
def array():
    return ArraySpec()


@pytest.fixture(scope="session")
def encoder(array):
    return HoaEncoder(array)


@pytest.fixture
def reference_scene():
    return RoomScene(REFERENCE_DIMS, REFERENCE_SOURCE, REFERENCE_ARRAY, t60=0.8, meta={"id": "reference"})


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
