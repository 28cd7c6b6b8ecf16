import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.criterion_lines = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    failed = call.excinfo is not None
    if call.when == "setup" and not failed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "FAIL" if failed else "PASS"
    item.config.criterion_lines[number] = f"criterion {number:>2} {status}  {title}" + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.criterion_lines
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
