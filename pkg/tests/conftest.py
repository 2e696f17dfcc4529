import pytest

_LINES = pytest.StashKey[list]()


class Criterion:
    def __init__(self, name: str, lines: list):
        self.name = name
        self.lines = lines
        self.recorded = False

    def record(self, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {self.name}: {detail}"
        print(line)
        self.lines.append(line)
        self.recorded = True
        return ok


@pytest.fixture
def criterion(request):
    """Records one PASS/FAIL line for an acceptance criterion, named by the test's ``name`` marker."""
    lines = request.config.stash.setdefault(_LINES, [])
    marker = request.node.get_closest_marker("criterion")
    c = Criterion(marker.args[0] if marker else request.node.name, lines)
    yield c
    if not c.recorded:
        c.record(False, "raised before a verdict was reached")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion label")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
