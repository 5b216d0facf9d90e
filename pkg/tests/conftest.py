import pytest

_RESULTS = {}


class Reporter:
    def __call__(self, number, title, passed, detail=""):
        _RESULTS[number] = (title, bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} [{number:2d}] {title}: {detail}")
        return bool(passed)


@pytest.fixture
def report():
    return Reporter()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, detail = _RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}")
