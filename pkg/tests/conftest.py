import os

import pytest

from avmask.fixtures import write_fixture_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Three synthetic speakers with four short utterances each (read-only)."""
    root = str(tmp_path_factory.mktemp("small"))
    return write_fixture_corpus(os.path.join(root, "corpus"), 3, 4, (0.5, 0.5), 0)
