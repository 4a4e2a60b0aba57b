import dataclasses

import pytest
from hypothesis import settings

from clmsim.cli import data_path, default_cmpldw

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def reference():
    return default_cmpldw()


@pytest.fixture
def four_bus_text():
    return data_path("four_bus.case").read_text()


@pytest.fixture
def two_bus_text():
    return data_path("two_bus.case").read_text()


def with_fields(obj, **kw):
    return dataclasses.replace(obj, **kw)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the summary prints them all at session end."""
    lines = request.config.stash[_VERDICTS]

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_VERDICTS]
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
