import pytest

ACCEPTANCE_RESULTS = []


def record_criterion(name: str, passed: bool, detail: str = ""):
    """Collect one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_RESULTS.append((name, passed, detail))


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        tag = "PASS" if passed else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"{tag} {name}{suffix}")
