"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_results: dict[int, list[tuple[str, bool, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n, title = mark.args
    _results.setdefault(n, []).append((title, rep.passed, item.name))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        entries = _results[n]
        ok = all(passed for _, passed, _ in entries)
        title = entries[0][0]
        failed = [name for _, passed, name in entries if not passed]
        suffix = f" (failed: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {title}{suffix}")
