"""Shared fixtures; also renders the acceptance summary table.

The acceptance tests record one (number, name, ok, detail) row each; the
terminal-summary hook prints them after the run so every guarantee gets a
visible PASS/FAIL line even under captured output.
"""
import pytest

ACCEPTANCE_ROWS: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion():
    """Run one acceptance check and record its summary line.

    `compute` returns (ok, detail); an exception records a FAIL row and
    propagates so the test itself still errors loudly.
    """
    def _run(num: int, name: str, compute):
        try:
            ok, detail = compute()
        except Exception as e:
            ACCEPTANCE_ROWS.append((num, name, False, f"errored: {e!r}"))
            raise
        ACCEPTANCE_ROWS.append((num, name, bool(ok), str(detail)))
        assert ok, f"criterion {num} ({name}): {detail}"
    return _run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_ROWS:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE_ROWS):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {num:2d} {status}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
