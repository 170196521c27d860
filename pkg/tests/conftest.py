import pytest
from hypothesis import settings

from fusiondetect.model import TrainConfig
from fusiondetect.pipeline import PipelineConfig
from fusiondetect.telemetry import FailureScenario, GeneratorConfig, generate_synthetic

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# one instance, ten hours, an RT spike well inside the test split
SMALL_GENERATOR = GeneratorConfig(duration_minutes=600,
                                  failures=(FailureScenario("rt_spike", 0, 470, 15),))
SMALL_TRAIN = TrainConfig(epochs=3, layers=2, heads=2, hidden=8, learning_rate=1e-2, windows_per_epoch=64)


def small_config(**kw):
    return PipelineConfig(**{"theta": 10, "train": SMALL_TRAIN, **kw})


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SMALL_GENERATOR, 0)


@pytest.fixture(scope="session")
def small_fit(small_dataset):
    from fusiondetect.pipeline import fit_instance
    return fit_instance(small_dataset, small_config())


ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    """Store the one-line verdict printed for an acceptance criterion."""
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
