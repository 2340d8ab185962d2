from __future__ import annotations

import pytest
from hypothesis import settings

from b2bagents.scenarios import s1, s1_document

settings.register_profile("ci", deadline=None, max_examples=100)
settings.load_profile("ci")


@pytest.fixture
def s1_doc():
    return s1_document()


@pytest.fixture
def scenario():
    return s1()


# -- acceptance summary: one line per criterion ------------------------------

_CRITERIA: dict[str, list[tuple[bool, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    details = "; ".join(v for k, v in item.user_properties if k == "detail")
    key = f"{marker.args[0]}. {marker.args[1]}"
    _CRITERIA.setdefault(key, []).append((rep.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k.split(".")[0])):
        parts = _CRITERIA[key]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        details = " | ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"criterion {key}: {verdict}" + (f"  [{details}]" if details else ""))
