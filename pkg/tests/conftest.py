import json
from pathlib import Path

import numpy as np
import pytest

from vfaqmri.data import default_acquisition
from vfaqmri.signal import build_dictionary, make_grid

ORACLES = json.loads((Path(__file__).parent / "oracles" / "values.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def acq():
    return default_acquisition()


@pytest.fixture(scope="session")
def small_dict(acq):
    """Coarse 32 x 32 dictionary for fast fitting tests."""
    return build_dictionary(make_grid(100.0, 5000.0, 32), make_grid(1.0, 200.0, 32), acq)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance criteria report -------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        details = [v for k, v in item.user_properties if k == "detail"]
        _CRITERIA[mark.args[0]] = (mark.args[1], status, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, details = _CRITERIA[n]
        tr.write_line(f"criterion {n:2d}: {status}  {title}")
        for d in details:
            tr.write_line(f"      {d}")
