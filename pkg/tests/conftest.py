import numpy as np
import pytest

from macs_sim.core import Modality, Token

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` records a pass/fail line and asserts."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def check(number, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        lines.append((number, f"[{status}] criterion {number:>2}: {title}  {detail}".rstrip()))
        assert ok, f"criterion {number} failed: {title} {detail}"

    return check


def make_token(i, weight=1.0, feature=(1.0, 0.0), group=0):
    if weight == 1.0:
        return Token(i, Modality.TEXT, np.asarray(feature, dtype=float))
    return Token(i, Modality.VISUAL, np.asarray(feature, dtype=float), group_id=group, weight=weight)
