"""
Shared fixtures for all tests.

Fixtures build the real thing (default vocabulary, real configs) rather than mocks.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import pytest

from uniedit.lib.run_config import RunConfig
from uniedit.lib.scene_graph import ObjectNode, Relation, SceneGraph
from uniedit.lib.semantic_space import ConceptVocabulary

if TYPE_CHECKING:
    from pathlib import Path
    from uniedit.lib.utilities import JSON_TYPE


@pytest.fixture(scope="session")
def vocab() -> ConceptVocabulary:
    """Default vocabulary (d=32, world seed 0)."""
    return ConceptVocabulary.build()


@pytest.fixture
def king_scene() -> SceneGraph:
    """A royal man."""
    return SceneGraph([ObjectNode.create(0, "man", {"rank": "royal"})])


@pytest.fixture
def dog_on_grass() -> SceneGraph:
    return SceneGraph(
        [ObjectNode.create(0, "dog"), ObjectNode.create(1, "grass")],
        [Relation(0, "on", 1)],
    )


@pytest.fixture
def brown_dog() -> SceneGraph:
    return SceneGraph([ObjectNode.create(0, "dog", {"color": "brown"})])


@pytest.fixture
def run_config(tmp_path: Path) -> RunConfig:
    """
    Real RunConfig with in-memory storage for testing.

    Output goes to a per-test temporary directory.
    """
    saved_config: dict[str, JSON_TYPE] = {"out": str(tmp_path), "seed": 0, "workers": 2}

    def loader() -> dict[str, JSON_TYPE]:
        return saved_config.copy()

    def saver(config: dict[str, JSON_TYPE]) -> None:
        saved_config.clear()
        saved_config.update(config)

    config = RunConfig(loader, saver)
    config.load()
    return config
