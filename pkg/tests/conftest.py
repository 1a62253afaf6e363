import pytest

from mixforge.pipeline import PipelineConfig, run_pipeline, save_bundle
from mixforge.synthetic import make_benchmark

TINY_TARGETS = ("Compressive strength", "Porosity")


def tiny_config(**overrides) -> PipelineConfig:
    base = dict(
        targets=TINY_TARGETS,
        n_trials=3,
        k=3,
        search_rounds=20,
        final_rounds=30,
        n_workers=1,
        seed=11,
    )
    base.update(overrides)
    return PipelineConfig(**base)


@pytest.fixture(scope="session")
def tiny_benchmark():
    return make_benchmark(n=240, seed=3)


@pytest.fixture(scope="session")
def tiny_bundle(tiny_benchmark):
    bundle, logs = run_pipeline(tiny_benchmark.dataset, tiny_config())
    bundle.trial_logs = logs  # stashed for tests that need them
    return bundle


@pytest.fixture(scope="session")
def tiny_bundle_path(tiny_bundle, tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle") / "bundle.json"
    save_bundle(tiny_bundle, path)
    return path
