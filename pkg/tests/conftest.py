"""Shared fixtures for phrase_mmt tests."""

import pytest
import torch

from phrase_mmt.corpus import SynthConfig, gen_synthetic
from phrase_mmt.grounding import build_phrase_image_set
from phrase_mmt.pipeline import build_vocabulary


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def small_synth_config():
    return SynthConfig(sentences=40, seed=3)


@pytest.fixture
def small_corpus(small_synth_config):
    return gen_synthetic(small_synth_config)


@pytest.fixture
def small_vocab(small_corpus):
    return build_vocabulary(small_corpus)


@pytest.fixture
def small_phrase_set(small_corpus):
    return build_phrase_image_set(small_corpus)
