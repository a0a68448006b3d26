from collections import defaultdict

import pytest

# criterion number -> list of (passed, detail)
_VERDICTS: dict[int, list[tuple[bool, str]]] = defaultdict(list)
N_CRITERIA = 10


@pytest.fixture
def report():
    """Record the outcome of one acceptance check (several checks may share a criterion)."""

    def _report(number: int, passed: bool, detail: str) -> bool:
        _VERDICTS[number].append((bool(passed), detail))
        return bool(passed)

    return _report


_ACCEPTANCE_COLLECTED = False


def pytest_collection_modifyitems(items):
    global _ACCEPTANCE_COLLECTED
    _ACCEPTANCE_COLLECTED = any(item.module.__name__.endswith("test_acceptance") for item in items)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_COLLECTED:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        checks = _VERDICTS.get(n)
        if not checks:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        ok = all(p for p, _ in checks)
        failed = [d for p, d in checks if not p]
        detail = "; ".join(failed) if failed else "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
