import pytest

from pscpc.pipeline import ExperimentConfig, run_experiment

NOISY_SEEDS = (0, 1, 2, 3, 4)


class _RunCache:
    """Default noisy-synthetic runs, shared by every test that needs them."""

    def __init__(self):
        self._runs = {}

    def get(self, ablation: str, seed: int):
        key = (ablation, seed)
        if key not in self._runs:
            self._runs[key] = run_experiment(ExperimentConfig(ablation=ablation, seed=seed))
        return self._runs[key]


@pytest.fixture(scope="session")
def default_runs():
    return _RunCache()
