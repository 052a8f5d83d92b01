from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from sgtriplets.baseline import load_kb
from sgtriplets.core import LexiconKind
from sgtriplets.io import builtin_path, load_lexicon

GOLDEN = Path(__file__).parent / "golden"
FIXTURE = builtin_path("fixture")


@pytest.fixture(scope="session")
def entities():
    return load_lexicon(builtin_path("vg150_entities.txt"), LexiconKind.ENTITY)


@pytest.fixture(scope="session")
def predicates():
    return load_lexicon(builtin_path("vg50_predicates.txt"), LexiconKind.PREDICATE)


@pytest.fixture(scope="session")
def large_entities():
    return load_lexicon(FIXTURE / "large_entities.txt", LexiconKind.ENTITY)


@pytest.fixture(scope="session")
def kb():
    return load_kb(builtin_path("kb_small.tsv"))


@pytest.fixture
def fixture_dir(tmp_path: Path) -> Path:
    """A writable copy of the bundled fixture."""
    dest = tmp_path / "fixture"
    shutil.copytree(FIXTURE, dest)
    return dest
