import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hardygrid.testfunctions import build_corpus, corpus_family, corpus_spec


@pytest.fixture(scope="session")
def spec256():
    return corpus_spec(256)


@pytest.fixture(scope="session")
def family256(spec256):
    return corpus_family(spec256, num_scales=24)


@pytest.fixture(scope="session")
def corpus256(spec256):
    return build_corpus(spec256, seed=7, size=10)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240809)
