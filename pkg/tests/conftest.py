import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    def record(number, ok, text):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
