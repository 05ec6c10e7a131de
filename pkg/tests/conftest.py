from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from textsup.corpus import load_corpus, load_embeddings

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def corpus_fixture():
    return load_corpus(FIXTURES / "scannet20_corpus.json")


@pytest.fixture(scope="session")
def embeddings_fixture(corpus_fixture):
    return load_embeddings(FIXTURES / "scannet20_embeddings.json", corpus_fixture)
