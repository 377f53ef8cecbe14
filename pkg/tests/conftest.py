import numpy as np
import pytest

from topictrack.core import BoundingBox, Detection

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or rep.failed:
        number, title = marker.args
        entry = _CRITERIA.setdefault(number, {"title": title, "ok": True})
        if rep.failed:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {entry['title']}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def box(x, y, w=10.0, h=10.0):
    return BoundingBox(float(x), float(y), float(w), float(h))


def det(frame, x, y, w=10.0, h=10.0, conf=0.9, emb=None):
    e = None if emb is None else np.asarray(emb, dtype=float)
    return Detection(frame, box(x, y, w, h), conf, e)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)
