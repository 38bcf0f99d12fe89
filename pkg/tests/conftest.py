import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qac.model import ModelConfig
from qac.synthetic import make_archetype_corpus
from qac.train import TrainConfig, train


@pytest.fixture(scope="session")
def quick_corpus():
    """Small two-archetype corpus for fast integration tests."""
    return make_archetype_corpus(
        n_train_users=12, queries_per_user=24, n_rare_users=4, rare_queries=5,
        n_test_users=4, test_queries_per_user=10, n_tune_users=2,
        tune_queries_per_user=8, pool_size=10, seed=7,
    )


@pytest.fixture(scope="session")
def quick_model(quick_corpus):
    """A lightly trained factor-variant model; real enough to adapt."""
    cfg = ModelConfig(variant="factor", e=8, h=24, m=4, r=2, vocab_size=40)
    return train(TrainConfig(epochs=3, batch_size=16, seed=9), cfg, quick_corpus.split)
