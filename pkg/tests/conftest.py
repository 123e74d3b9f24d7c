import numpy as np
import pytest

from netgame.adversarial_channel import ChannelConfig, GameSpec
from netgame.control import solve_control
from netgame.lti_model import ControlWeights, PlantModel, steady_state_filter_riccati

A_REF = [[1.25, 0.1], [0.0, 1.0]]
B_REF = [[1.0], [2.0]]
C_REF = [[1.0, 1.0]]

ACCEPTANCE_LINES = []


def record_acceptance(number, name, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number} {name}: {detail}")


@pytest.fixture(scope="session")
def model():
    return PlantModel(A_REF, B_REF, C_REF, np.eye(2), np.eye(1))


@pytest.fixture(scope="session")
def weights():
    return ControlWeights(np.eye(2), np.eye(1), 0.999)


@pytest.fixture(scope="session")
def channel():
    return ChannelConfig(0.9, 0.6)


@pytest.fixture(scope="session")
def filt(model):
    return steady_state_filter_riccati(model)


@pytest.fixture(scope="session")
def control(model, weights):
    return solve_control(model, weights)


@pytest.fixture(scope="session")
def spec(model, weights, channel, filt, control):
    return GameSpec.build(model, weights, channel, 300.0, 200.0, 10, Pbar=filt[0], control=control)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
