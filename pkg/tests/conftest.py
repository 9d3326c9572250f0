import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sidechan.experiments import (ExperimentConfig, run_combined, run_geometry,  # noqa: E402
                                  run_load_robustness, run_mitigation, run_semantic)
from sidechan.hwmodel import get_profile  # noqa: E402

from acceptance_log import ACCEPTANCE_RESULTS  # noqa: E402

# Full-size (250 per class) bundles are shared across test modules; image
# densities are memoised in-process, so each dataset is scored only once.


@pytest.fixture(scope="session")
def intel_combined():
    return run_combined(ExperimentConfig())


@pytest.fixture(scope="session")
def amd_combined():
    return run_combined(ExperimentConfig(profile=get_profile("amd-7950x")))


@pytest.fixture(scope="session")
def intel_semantic():
    return run_semantic(ExperimentConfig())


@pytest.fixture(scope="session")
def amd_semantic():
    return run_semantic(ExperimentConfig(profile=get_profile("amd-7950x")))


@pytest.fixture(scope="session")
def intel_geometry():
    return run_geometry(ExperimentConfig())


@pytest.fixture(scope="session")
def amd_geometry():
    return run_geometry(ExperimentConfig(profile=get_profile("amd-7950x")))


@pytest.fixture(scope="session")
def intel_mitigation():
    return run_mitigation(ExperimentConfig())


@pytest.fixture(scope="session")
def intel_load():
    return run_load_robustness(ExperimentConfig())


@pytest.fixture(scope="session")
def smoke_config():
    return ExperimentConfig(per_class=20)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, text = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {text}")
