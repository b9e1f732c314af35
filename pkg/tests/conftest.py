import re
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=100, deadline=None, derandomize=True, database=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("default")

_CRITERIA = {}  # "C1" -> outcome
_DETAILS = {}
PROPERTIES = {}  # nodeid -> (max_examples, outcome) for every hypothesis test
SESSION = {}


def pytest_sessionstart(session):
    SESSION["start"] = time.monotonic()


def pytest_collection_modifyitems(items):
    # acceptance runs last so its invariant-suite check sees every property result
    items.sort(key=lambda item: "test_acceptance.py" in item.nodeid)
    for item in items:
        fn = getattr(item, "obj", None)
        if getattr(fn, "is_hypothesis_test", False):
            PROPERTIES[item.nodeid] = [fn._hypothesis_internal_use_settings.max_examples, None]


@pytest.fixture
def record(request):
    """Store a one-line measurement for the acceptance summary."""
    m = re.match(r"test_(c\d)", request.node.name)
    key = m.group(1).upper() if m else request.node.name

    def _record(text):
        _DETAILS[key] = text

    return _record


def pytest_runtest_logreport(report):
    prop = PROPERTIES.get(report.nodeid)
    if prop is not None and (report.when == "call" or report.outcome != "passed"):
        if prop[1] in (None, "passed"):
            prop[1] = report.outcome
    m = re.search(r"test_acceptance\.py::test_(c\d)", report.nodeid)
    if not m:
        return
    key = m.group(1).upper()
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[key] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k[1:])):
        outcome = "PASS" if _CRITERIA[key] == "passed" else "FAIL"
        terminalreporter.write_line(f"{key} {outcome}  {_DETAILS.get(key, '')}")


@pytest.fixture(scope="session")
def room():
    from gazecal.scene import room_scene

    return room_scene()


@pytest.fixture(scope="session")
def plane_z2():
    """Single large quad on the plane z = 2 facing the origin."""
    from gazecal.scene import SceneModel, quad_mesh

    v, f = quad_mesh([(-50, -50, 2), (50, -50, 2), (50, 50, 2), (-50, 50, 2)])
    return SceneModel(v, f)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@pytest.fixture
def property_results():
    """Outcomes of the hypothesis tests run so far, and the elapsed session time."""
    return PROPERTIES, time.monotonic() - SESSION["start"]
