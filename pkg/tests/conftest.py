import pytest

from covgt import ModelConfig, TrainConfig
from covgt.data.synthetic import SyntheticWorldSpec, generate_synthetic_dataset
from covgt.data.workspace import corpus_from_synthetic

SMALL_WORLD = dict(k=2, l_c=2, dim_r=24, dim_a=8)
SMALL_MODEL = dict(d=16, n=4, k=2, l_c=2, heads=2, edge_heads=4, text_layers=1, text_heads=2, max_len=24)


@pytest.fixture(scope="session")
def small_world():
    spec = SyntheticWorldSpec(**SMALL_WORLD)
    return generate_synthetic_dataset(spec, {"train": 48, "val": 16}, seed=0)


@pytest.fixture(scope="session")
def small_corpus(small_world):
    return corpus_from_synthetic(small_world, n=4, k=2, l_c=2)


@pytest.fixture(scope="session")
def small_model_cfg():
    return ModelConfig(**SMALL_MODEL)


@pytest.fixture(scope="session")
def quick_train_cfg():
    return TrainConfig(batch_size=16, epochs=2, stage2_epochs=0, patience=5, n_neg_questions=2)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: int(k.split()[0][1:])):
        terminalreporter.write_line(lines[key])
