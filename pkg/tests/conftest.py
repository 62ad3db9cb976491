import numpy as np
import pytest

from energy_cbf.dynamics import RobotModel, desk_arm

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def arm():
    return desk_arm()


@pytest.fixture
def flat_arm():
    return desk_arm(gravity=0.0)


@pytest.fixture
def pendulum():
    """Point mass at half length; q = 0 hangs straight down."""
    return RobotModel(mass=[1.0], length=[1.0], com=[0.5], inertia=[0.0], base_angle=-np.pi / 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
