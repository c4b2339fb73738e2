"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

from enum import Enum
from types import MappingProxyType
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping


class TaskType(Enum):
    """Editing task categories."""

    BACKGROUND_CHANGE = "background_change"
    COLOR_ALTER = "color_alter"
    MATERIAL_ALTER = "material_alter"
    MOTION_CHANGE = "motion_change"
    PS_HUMAN = "ps_human"
    STYLE_CHANGE = "style_change"
    SUBJECT_ADD = "subject_add"
    SUBJECT_REMOVE = "subject_remove"
    SUBJECT_REPLACE = "subject_replace"
    TEXT_CHANGE = "text_change"
    TONE_TRANSFER = "tone_transfer"

    @classmethod
    def parse(cls, value: str) -> TaskType:
        normalized = value.strip().lower().replace("-", "_")
        try:
            return cls(normalized)
        except ValueError:
            options = ", ".join(task.value for task in cls)
            raise ValueError(f"Unknown task type '{value}' (expected one of: {options})") from None


EXECUTABLE_TASKS: tuple[TaskType, ...] = tuple(task for task in TaskType if task is not TaskType.TEXT_CHANGE)

# Slots an attribute group fills; every other axis group provides node names.
ATTRIBUTE_SLOTS: frozenset[str] = frozenset({"color", "material", "pose", "style", "tone", "rank"})

CANONICAL_SLOT_ORDER: tuple[str, ...] = ("color", "material", "pose", "style")

REQUIRED_SLOTS: Mapping[TaskType, tuple[str, ...]] = MappingProxyType({
    TaskType.COLOR_ALTER: ("color",),
    TaskType.MATERIAL_ALTER: ("material",),
    TaskType.MOTION_CHANGE: ("pose",),
    TaskType.STYLE_CHANGE: ("style",),
    TaskType.TONE_TRANSFER: ("tone",),
})


def slot_sort_key(slot: str) -> tuple[int, str]:
    if slot in CANONICAL_SLOT_ORDER:
        return (CANONICAL_SLOT_ORDER.index(slot), "")
    return (len(CANONICAL_SLOT_ORDER), slot)


def ordered_slots(slots: Iterable[str]) -> list[str]:
    return sorted(set(slots), key=slot_sort_key)
