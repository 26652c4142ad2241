"""Shared fixtures: a tiny model configuration and a small synthetic corpus."""

import numpy as np
import pytest

from multilingual import build_vocab, load_registry, load_split, write_toy_corpus
from multilingual.data import bitext_paths
from seq2seq import AdapterConfig, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(
        vocab_size=12,
        model_dim=8,
        ff_dim=16,
        heads=2,
        enc_layers=1,
        dec_layers=1,
        max_len=16,
        dropout=0.0,
        attention_dropout=0.0,
    )


@pytest.fixture
def tiny_adapter_cfg(tiny_cfg):
    return AdapterConfig(model_dim=tiny_cfg.model_dim, bottleneck=4)


@pytest.fixture(scope="session")
def ted_registry():
    return load_registry("ted")


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory, ted_registry):
    out = tmp_path_factory.mktemp("toy")
    write_toy_corpus(out, ted_registry, seed=0, valid_n=3, test_n=3,
                     vocab_words=10, min_len=2, max_len=5, scale=1e-4, min_size=12, max_size=24)
    return out


@pytest.fixture(scope="session")
def toy_vocab(toy_dir, ted_registry):
    lines = []
    for info in ted_registry:
        for path in bitext_paths(toy_dir, "train", info.pair):
            lines.extend(path.read_text(encoding="utf-8").splitlines())
    return build_vocab(lines, lang_codes=ted_registry.codes)


@pytest.fixture(scope="session")
def toy_train(toy_dir, ted_registry, toy_vocab):
    return load_split(toy_dir, "train", [info.pair for info in ted_registry], toy_vocab)


@pytest.fixture(scope="session")
def toy_valid(toy_dir, ted_registry, toy_vocab):
    return load_split(toy_dir, "valid", [info.pair for info in ted_registry], toy_vocab)


@pytest.fixture
def toy_model_cfg(toy_vocab):
    return ModelConfig(
        vocab_size=len(toy_vocab),
        model_dim=8,
        ff_dim=16,
        heads=2,
        enc_layers=1,
        dec_layers=1,
        max_len=16,
        dropout=0.0,
        attention_dropout=0.0,
    )
