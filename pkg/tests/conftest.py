import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from logsentinel.evaluation import SyntheticSpec, generate_synthetic_corpus
from logsentinel.trainer import TrainConfig, fit

SMALL_MODEL = dict(d=8, d_o=16, d_ff=32, n_heads=2, n_layers=2, max_len=16)


@pytest.fixture(scope="session")
def small_corpus():
    spec = SyntheticSpec(n_keys=10, seq_len=10, n_branches=2, n_rare=1, n_train=200, n_val=60, n_test=90)
    return generate_synthetic_corpus(spec, seed=0)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    cfg = TrainConfig(epochs=40, batch_size=16, learning_rate=5e-3, seed=0)
    return fit(small_corpus.train, cfg, SMALL_MODEL)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
