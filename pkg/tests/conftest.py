"""Shared fixtures: the toy corpus, its scripted backend and a default template"""

from pathlib import Path

import pytest

from backend import load_script
from prompting import PromptTemplate
from text_stream import read_parallel_corpus


FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def toy_corpus_path() -> Path:
    return FIXTURES / "toy.tsv"


@pytest.fixture
def toy_script_path() -> Path:
    return FIXTURES / "toy_script.jsonl"


@pytest.fixture
def toy_pairs(toy_corpus_path):
    return read_parallel_corpus(toy_corpus_path)


@pytest.fixture
def scripted(toy_script_path):
    return load_script(toy_script_path)


@pytest.fixture
def template() -> PromptTemplate:
    return PromptTemplate()
