import numpy as np
import pytest

from rsma_comp.channels import ChannelState

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def report(number, ok, detail=""):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def channel(H):
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    return ChannelState(H, np.ones(H.shape))


def random_channel(rng, K, M):
    return channel((rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M))) / np.sqrt(2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
