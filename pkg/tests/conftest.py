import pytest

_RESULTS = {}  # criterion number -> list of (ok, detail)


@pytest.fixture
def report():
    """Record one part of an acceptance criterion; the summary prints one line per criterion."""

    def record(criterion: int, title: str, ok: bool, detail: str = "") -> bool:
        _RESULTS.setdefault(criterion, (title, []))[1].append((bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_RESULTS):
        title, parts = _RESULTS[crit]
        ok = all(p[0] for p in parts)
        detail = "; ".join(p[1] for p in parts if p[1])
        terminalreporter.write_line(f"criterion {crit:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
