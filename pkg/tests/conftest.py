"""Echo acceptance verdict lines after the run summary.

pytest captures per-test stdout, so the one-line verdicts printed by
test_acceptance.py would be invisible for passing tests; this hook
reprints them once, in criterion order, at the end of the session.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None) if mod else None
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
