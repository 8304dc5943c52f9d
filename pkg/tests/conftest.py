import sys
from pathlib import Path

# lets test modules share helpers (``from test_core import ...``)
sys.path.insert(0, str(Path(__file__).parent))

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
