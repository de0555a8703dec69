import numpy as np
import pytest
import torch

from wordstamp.codec import Vocabulary
from wordstamp.model import ModelConfig, build_model
from wordstamp.synth import GeneratorConfig, generate

torch.set_num_threads(1)


@pytest.fixture
def micro_vocab():
    return Vocabulary(("a", "b", "c"), timestamp_count=8, resolution_ms=10)


@pytest.fixture
def micro_model(micro_vocab):
    cfg = ModelConfig.for_vocab(micro_vocab, feature_dim=3, d_model=16, n_layers=2, n_heads=4, max_tokens=12)
    return build_model(cfg, seed=0).double()


@pytest.fixture
def micro_frames():
    return np.random.default_rng(0).standard_normal((7, 3))


@pytest.fixture(scope="session")
def small_corpus():
    cfg = GeneratorConfig(seed=11)
    return cfg, generate(cfg, 64)


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
