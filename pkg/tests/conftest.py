from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
_CRITERIA = {}


def pytest_addoption(parser):
    parser.addoption("--geostyle", default=None,
                     help="GeoStyle long-format CSV for the optional reproduction criterion "
                          "(default: data/geostyle/geostyle.csv under the repository)")


@pytest.fixture
def geostyle_path(request):
    path = request.config.getoption("--geostyle")
    return Path(path) if path else REPO / "data" / "geostyle" / "geostyle.csv"


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary."""
    def record(number, title, passed, detail):
        _CRITERIA[number] = (title, passed, detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        terminalreporter.write_line(f"[{status}] #{number} {title}: {detail}")
