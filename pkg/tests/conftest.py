import pytest

from adaptive_robust.config import bundled_config, load_config
from adaptive_robust.quantization import build_normal_quantizer


@pytest.fixture(scope="session")
def case1_config():
    return load_config(bundled_config("case1.json"))


@pytest.fixture(scope="session")
def case2_config():
    return load_config(bundled_config("case2.json"))


@pytest.fixture(scope="session")
def q10():
    return build_normal_quantizer(10)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
