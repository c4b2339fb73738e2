"""Tests for utilities module."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from uniedit.lib.utilities import (
    atomic_write_csv,
    atomic_write_json,
    create_slug,
    csv_text,
    derive_seed,
    dumps_json,
    read_json_object,
    vector_from_json,
    vector_to_json,
)


LIB_DIR = Path(__file__).parent.parent / "uniedit" / "lib"


class TestCreateSlug:
    """Test class for create_slug function."""

    def test_basic_conversion(self) -> None:
        assert create_slug("Make it a woman") == "make_it_a_woman"
        assert create_slug("remove") == "remove"

    def test_special_characters(self) -> None:
        """Test that special characters are replaced with underscores."""
        assert create_slug("Replace the dog with a cat!") == "replace_the_dog_with_a_cat"
        assert create_slug('change the text to "hello"') == "change_the_text_to_hello"
        assert create_slug("dog,cat.bird") == "dog_cat_bird"

    def test_consecutive_and_edge_characters(self) -> None:
        assert create_slug("  make   the dog  red  ") == "make_the_dog_red"
        assert create_slug("__dog__") == "dog"
        assert create_slug("!!!") == ""
        assert create_slug("") == ""

    def test_numbers_preserved(self) -> None:
        assert create_slug("Case 12 seed 3") == "case_12_seed_3"


class TestDeriveSeed:
    """Test class for derive_seed."""

    def test_deterministic(self) -> None:
        assert derive_seed(7, 1) == derive_seed(7, 1)

    def test_streams_are_distinct(self) -> None:
        seeds = {derive_seed(0, i) for i in range(50)}
        assert len(seeds) == 50
        assert derive_seed(0, 1) != derive_seed(1, 0)

    def test_fits_32_bits(self) -> None:
        assert 0 <= derive_seed(123, 4, 5) < 2**32


class TestJsonAndFiles:
    """Test class for serialization and atomic file output."""

    def test_vector_json_preserves_values(self) -> None:
        values = np.array([0.1, -2.5, 1e-12])
        restored = vector_from_json(vector_to_json(values))
        assert np.array_equal(restored, values)

    def test_vector_from_json_rejects_non_list(self) -> None:
        with pytest.raises(ValueError, match="list of numbers"):
            vector_from_json({"a": 1})

    def test_dumps_json_is_sorted_and_newline_terminated(self) -> None:
        text = dumps_json({"b": 1, "a": [1, 2]})
        assert text.endswith("\n")
        assert text.index('"a"') < text.index('"b"')
        assert dumps_json({"b": 1, "a": 2}, sort_keys=False).index('"b"') < dumps_json({"b": 1, "a": 2}, sort_keys=False).index('"a"')

    def test_atomic_write_json_creates_parents(self, tmp_path: Path) -> None:
        path = atomic_write_json(tmp_path / "nested" / "dir" / "out.json", {"x": 1})
        assert json.loads(path.read_text(encoding="utf-8")) == {"x": 1}
        assert not list(path.parent.glob(".*.tmp"))

    def test_atomic_write_replaces_existing(self, tmp_path: Path) -> None:
        path = tmp_path / "out.json"
        atomic_write_json(path, {"x": 1})
        atomic_write_json(path, {"x": 2})
        assert read_json_object(path) == {"x": 2}

    def test_csv_output(self, tmp_path: Path) -> None:
        assert csv_text(("a", "b"), [(1, "x,y")]) == 'a,b\n1,"x,y"\n'
        path = atomic_write_csv(tmp_path / "rows.csv", ("k", "score"), [(0, "7.5"), (1, "8.0")])
        assert path.read_text(encoding="utf-8").splitlines() == ["k,score", "0,7.5", "1,8.0"]

    def test_read_json_object_rejects_arrays(self, tmp_path: Path) -> None:
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ValueError, match="JSON object"):
            read_json_object(path)


class TestLicenseHeaders:
    """Every library module opens with the license header."""

    @pytest.mark.parametrize("module", sorted(p.name for p in LIB_DIR.glob("*.py") if p.name != "__init__.py"))
    def test_module_has_header(self, module: str) -> None:
        text = (LIB_DIR / module).read_text(encoding="utf-8")
        assert text.startswith('"""\nUniEdit. Licensed under the GNU GPL-3.0.\n')
