import time

import pytest

_KEY = pytest.StashKey[dict]()


class Recorder:
    def __init__(self, store):
        self.store = store

    def __call__(self, number, ok, detail, started):
        self.store[number] = (bool(ok), detail, time.perf_counter() - started)
        return ok


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, ok, detail, start_time)`` for the end-of-run summary."""
    return Recorder(request.config.stash.setdefault(_KEY, {}))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail, elapsed = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  "
                                    f"[{elapsed:.1f} s]")
