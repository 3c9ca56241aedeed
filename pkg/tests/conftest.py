import numpy as np
import pytest

from oracle_dis.data import SyntheticSpec, generate_synthetic, split_corpus
from oracle_dis.losses import LossConfig
from oracle_dis.model import init_model
from oracle_dis.trainer import TrainConfig, fit

# desk-scale reference setup shared by the training tests
REF_LR = 1e-3
REF_STEPS = 3000
REF_EVAL_EVERY = 50
REF_HIDDEN = [16]


@pytest.fixture(scope="session")
def planted_splits():
    corpus = generate_synthetic(SyntheticSpec())
    return split_corpus(corpus, (0.8, 0.1, 0.1), seed=0)


_trained = {}


def train_reference(splits, preset="meat+oracle", weights=None, seed=0, steps=REF_STEPS):
    """Train on the planted splits; memoised so tests can share runs."""
    key = (preset, tuple(sorted((weights or {}).items())), seed, steps)
    if key not in _trained:
        train, val, _ = splits
        cfg = TrainConfig(learning_rate=REF_LR, batch_size=512, max_iterations=steps, patience=10,
                          seed=seed, eval_every=REF_EVAL_EVERY)
        loss = LossConfig(preset=preset, weights=dict(weights or {}))
        init = init_model(seed, train.d, REF_HIDDEN, 2)
        _trained[key] = fit(train, val, cfg, loss, init)
    return _trained[key]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def codeswitch_fixture(n_sentences=500, n_entries=50, seed=11):
    """Sentences over a 200-word vocabulary and a dictionary covering 50 of them."""
    rng = np.random.default_rng(seed)
    vocab = [f"w{i:03d}" for i in range(200)]
    lines = [f"{vocab[i]} ü{vocab[i]}_{k}" for i in range(n_entries) for k in range(1 + i % 2)]
    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(2, 9))
        # a quarter of the sentences draw only from uncovered words
        lo = n_entries if rng.random() < 0.25 else 0
        sentences.append([vocab[int(j)] for j in rng.integers(lo, 200, size=length)])
    return sentences, lines


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
