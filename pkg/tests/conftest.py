import numpy as np
import pytest

from ffalab.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(groups=1, blocks_per_group=2, channels=16, reduction_ratio=4)


def away_from_zero(a, margin=0.1):
    """Push values off the relu/abs kink so finite differences stay on one branch."""
    return np.where(a >= 0, a + margin, a - margin)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
CRITERIA = range(1, 11)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        ok, detail = ACCEPTANCE.get(n, (False, "not run"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
