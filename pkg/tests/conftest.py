import numpy as np
import pytest
from hypothesis import settings

from dsrcnn.model import ModelConfig, build_model

# fixed example stream so every run of the suite checks the same cases
settings.register_profile("repro", derandomize=True, deadline=None, print_blob=True)
settings.load_profile("repro")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(block_channels=[2, 2, 3, 3, 3], convs_per_block=[1, 1, 1, 1, 1], rcl_T=1, seed=7)


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config)


@pytest.fixture
def blob_mask():
    gt = np.zeros((16, 16))
    gt[4:11, 3:10] = 1
    return gt


# one line per acceptance criterion, printed after the test summary
_ACCEPTANCE: list[str] = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        _ACCEPTANCE.extend(value for key, value in report.user_properties if key == "acceptance")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
