"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from collections.abc import Callable
    from typing import Union
    from collections.abc import Iterable, Sequence
    from typing_extensions import TypeAlias

    JSON_TYPE: TypeAlias = Union[dict[str, "JSON_TYPE"], list["JSON_TYPE"], str, int, float, bool, None]
else:
    JSON_TYPE = Any


#  override decorator for Python < 3.12

if sys.version_info >= (3, 12):
    from typing import override  # type: ignore[attr-defined]
elif TYPE_CHECKING:
    from typing_extensions import override  # type: ignore[unused-import]
else:
    # Dummy decorator for runtime on Python < 3.12
    def override(func: Callable) -> Callable[..., Any]:
        return func


# create_slug function


def create_slug(text: str) -> str:
    """
    Create a file-system safe slug from a text string.

    Converts text to lowercase, replaces spaces and special characters with underscores,
    and removes consecutive underscores.

    Example:
        >>> create_slug("Replace the dog with a cat!")
        'replace_the_dog_with_a_cat'
    """
    slug = text.lower()
    slug = re.sub(r"[^a-z0-9]+", "_", slug)
    slug = slug.strip("_")
    slug = re.sub(r"_+", "_", slug)
    return slug


# seeds


def derive_seed(seed: int, *stream: int) -> int:
    """Derive an independent 32-bit seed for a sub-stream (round, case, ...) of a seeded run."""
    sequence = np.random.SeedSequence([seed, *stream])
    return int(sequence.generate_state(1)[0])


# vectors as JSON


def vector_to_json(values: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=np.float64).ravel()]


def vector_from_json(data: JSON_TYPE) -> np.ndarray:
    if not isinstance(data, list):
        raise ValueError(f"Expected a list of numbers, got {type(data).__name__}")
    return np.array([float(v) for v in data], dtype=np.float64)  # type: ignore[arg-type]


# atomic file output


def dumps_json(payload: JSON_TYPE, sort_keys: bool = True) -> str:
    """Serialize to JSON deterministically (fixed indentation, trailing newline)."""
    return json.dumps(payload, indent=2, sort_keys=sort_keys, ensure_ascii=False) + "\n"


def atomic_write_text(path: Path, text: str) -> Path:
    """
    Write text to path through a temporary sibling file and an atomic rename.

    Readers never observe a partially written file. Parent directories are created.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(f".{path.name}.tmp")
    with tmp_path.open("w", encoding="utf-8", newline="") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp_path, path)
    return path


def atomic_write_json(path: Path, payload: JSON_TYPE) -> Path:
    return atomic_write_text(path, dumps_json(payload))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return output.getvalue()


def atomic_write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def read_json_object(path: Path) -> dict[str, JSON_TYPE]:
    with path.open("r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path} does not contain a JSON object")
    return data
