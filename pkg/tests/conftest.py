import pytest

pytest.register_assert_rewrite("helpers", "oracles")

from triagebench.demo import load_demo_corpus
from triagebench.taxonomy import builtin_taxonomy


@pytest.fixture(scope="session")
def taxonomy():
    return builtin_taxonomy()


@pytest.fixture(scope="session")
def demo_corpus():
    return load_demo_corpus()
