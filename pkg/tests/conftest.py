import pytest

from offroad_vv.harness.suite import load_suite


@pytest.fixture(scope="session")
def suite():
    return load_suite("suite_herd.toml")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid and rep.when == "call" or (
                    outcome == "error" and "test_criterion_" in nodeid):
                name = nodeid.split("test_criterion_")[1]
                num, _, label = name.partition("_")
                lines.append((int(num), f"criterion {int(num):2d} {label.replace('_', ' ')}: "
                                        f"{'PASS' if outcome == 'passed' else 'FAIL'}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
