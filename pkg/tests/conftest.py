import pytest

_ACCEPTANCE = {}


class AcceptanceRecorder:
    """Collects one verdict line per acceptance criterion."""

    def __call__(self, number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} {detail}")


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE, key=lambda k: (int(str(k).split("[")[0]), str(k))):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} {detail}")
