import pytest

N_CRITERIA = 9
_results: dict = {}
_seen = {"acceptance": False}


@pytest.fixture(scope="session")
def acceptance_log():
    """``record(k, passed, detail)`` stores the outcome of acceptance criterion ``k``."""
    _seen["acceptance"] = True

    def record(k, passed, detail):
        _results[k] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _seen["acceptance"]:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        ok, detail = _results.get(k, (False, "no result (test errored or was not run)"))
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")
