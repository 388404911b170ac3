import dataclasses

import pytest

from healthtriage.providers import MockProvider, ProviderConfig


@pytest.fixture
def mock_config():
    return ProviderConfig(kind="mock", model_name="mock-model", embed_dim=256, seed=7)


@pytest.fixture
def provider(mock_config):
    return MockProvider(mock_config)


@pytest.fixture(scope="session")
def tiny_world():
    from healthtriage.synthetic import SyntheticSpec, generate_synthetic

    return generate_synthetic(SyntheticSpec(n_examples=80, n_classes=4, seed=5))


@pytest.fixture(scope="session")
def tiny_pipeline(tiny_world):
    """Small trained pipeline shared across test modules: (world, tp, train, test)."""
    from healthtriage.pipeline import run_training, split_examples

    world = tiny_world
    provider = MockProvider(world.provider_config, world.answer_table)
    config = dataclasses.replace(
        world.pipeline_config,
        train=dataclasses.replace(world.pipeline_config.train, n_rounds=10),
    )
    train_ex, test_ex = split_examples(world.examples, 0.25, world.spec.seed)
    tp = run_training(world.corpus, world.bank, train_ex, provider, config)
    return world, tp, train_ex, test_ex


@pytest.fixture(scope="session")
def case_study_pipeline():
    from case_study import build_case_study

    return build_case_study()
