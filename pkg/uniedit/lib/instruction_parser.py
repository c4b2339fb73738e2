"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import logging
import re
from typing import TYPE_CHECKING, Callable, NamedTuple, Optional

from .scene_graph import (
    AddNode,
    GraphPatch,
    ObjectNode,
    Relabel,
    Relation,
    RemoveNode,
    SceneGraph,
    SetAttribute,
    SetRelation,
    apply_patch,
    caption_from_graph,
)
from .task_types import ATTRIBUTE_SLOTS, TaskType

if TYPE_CHECKING:
    from collections.abc import Sequence
    from .scene_graph import PatchOp
    from .semantic_space import ConceptVocabulary
    from .utilities import JSON_TYPE

__all__ = [
    "ORDINAL_WORDS",
    "EditPlan",
    "GrammarError",
    "InstructionError",
    "Replacement",
    "TaskType",
    "UnresolvedReferentError",
    "UnsupportedTaskError",
    "apply_replacements",
    "build_edit_plan",
    "compute_replacements",
    "parse_instruction",
]

logger = logging.getLogger(__name__)


class InstructionError(ValueError):
    pass


class GrammarError(InstructionError):
    """The instruction matches none of the forms accepted for the task."""

    def __init__(self, clause: str, task: TaskType, expected: Sequence[str]) -> None:
        forms = "; ".join(f"'{form}'" for form in expected)
        super().__init__(f"Cannot parse '{clause}' as a {task.value} instruction (expected one of: {forms})")
        self.clause = clause
        self.task = task
        self.expected = tuple(expected)


class UnresolvedReferentError(InstructionError):
    def __init__(self, referent: str) -> None:
        super().__init__(f"No object in the scene matches '{referent}'")
        self.referent = referent


class UnsupportedTaskError(InstructionError):
    def __init__(self, task: TaskType) -> None:
        super().__init__(f"Task '{task.value}' is recognised but cannot be executed")
        self.task = task


# instruction forms

_REF = r"(?P<ref>it|(?:the )?[a-z]+(?: [a-z]+)*?)"
_ARTICLE = r"(?:(?:a|an) )?"

# Ordinal prefixes of an object phrase, "the second dog".
ORDINAL_WORDS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth")

_RELATIONS: dict[str, str] = {"on": "on", "under": "under", "beside": "beside", "near": "near", "in": "in", "next to": "beside"}

# Slots whose value applies to the whole scene rather than one object.
_SCENE_WIDE_SLOTS = frozenset({"style", "tone"})

# Axis groups a task may edit through "make ..." and "change <slot> to ..." clauses.
_MAKE_TARGETS: dict[TaskType, tuple[str, ...]] = {
    TaskType.COLOR_ALTER: ("color",),
    TaskType.MATERIAL_ALTER: ("material",),
    TaskType.MOTION_CHANGE: ("pose",),
    TaskType.PS_HUMAN: ("gender", "rank"),
}
_SLOT_TO_TARGETS: dict[TaskType, tuple[str, ...]] = {
    TaskType.STYLE_CHANGE: ("style",),
    TaskType.TONE_TRANSFER: ("tone",),
    TaskType.BACKGROUND_CHANGE: ("background",),
    TaskType.MOTION_CHANGE: ("pose",),
    TaskType.PS_HUMAN: ("gender", "rank"),
}

_TEXT_CHANGE_PATTERN = re.compile(r'^change the text(?: (?:on|of) (?:the )?[a-z ]+?)? to "[^"]*"$')
_TEXT_CHANGE_TEMPLATE = 'change the text (on <object>)? to "<text>"'

_Handler = Callable[["re.Match[str]", TaskType, SceneGraph, "ConceptVocabulary"], "list[PatchOp]"]


class InstructionForm(NamedTuple):
    name: str
    pattern: re.Pattern[str]
    template: str
    handler: _Handler


def primary_node(g: SceneGraph, task: TaskType, vocab: ConceptVocabulary) -> ObjectNode:
    """The object "it" refers to: the first person for portrait edits, else the first object."""
    if not g.nodes:
        raise UnresolvedReferentError("it")
    if task is TaskType.PS_HUMAN and "gender" in vocab.axes:
        for node in g.nodes:
            if vocab.group_of(node.name) == "gender":
                return node
    return g.nodes[0]


def resolve_referent(ref: str, task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> ObjectNode:
    """
    Resolve a noun phrase to a node.

    The last token is the object name, earlier tokens are attribute values the
    node must carry. An optional leading ordinal picks among the matching nodes
    in graph order; without one the first match wins.
    """
    if ref == "it":
        return primary_node(g, task, vocab)

    tokens = ref.removeprefix("the ").split()
    position = 0
    if len(tokens) > 1 and tokens[0] in ORDINAL_WORDS:
        position = ORDINAL_WORDS.index(tokens[0])
        tokens = tokens[1:]
    vocab.check_tokens(tokens)
    name, qualifiers = tokens[-1], tokens[:-1]
    matches = [
        node for node in g.nodes
        if node.name == name and all(q in {value for _, value in node.attributes} for q in qualifiers)
    ]
    if position >= len(matches):
        raise UnresolvedReferentError(ref)
    return matches[position]


def _name_token(token: str, vocab: ConceptVocabulary) -> str:
    group = vocab.group_of(token)
    if group in ATTRIBUTE_SLOTS:
        raise InstructionError(f"'{token}' is a {group} value, not an object name")
    return token


def _slot_value(slot: str, token: str, vocab: ConceptVocabulary) -> str:
    if vocab.group_of(token) != slot:
        raise InstructionError(f"'{token}' is not a {slot} value")
    return token


def _check_target(group: str | None, task: TaskType, allowed: Sequence[str], token: str) -> str:
    if group is None or group not in allowed:
        options = ", ".join(allowed)
        raise InstructionError(f"'{token}' is not editable under {task.value} (expected a {options} value)")
    return group


def _handle_replace(match: re.Match[str], task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> list[PatchOp]:
    node = resolve_referent(match["ref"], task, g, vocab)
    return [Relabel(node.id, _name_token(match["new"], vocab))]


def _handle_change_slot_of(match: re.Match[str], task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> list[PatchOp]:
    slot = match["slot"]
    if slot not in ATTRIBUTE_SLOTS:
        raise InstructionError(f"'{slot}' is not an attribute slot")
    node = resolve_referent(match["ref"], task, g, vocab)
    return [SetAttribute(node.id, slot, _slot_value(slot, match["value"], vocab))]


def _handle_make(match: re.Match[str], task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> list[PatchOp]:
    value = match["value"]
    group = _check_target(vocab.group_of(value), task, _MAKE_TARGETS[task], value)
    node = resolve_referent(match["ref"], task, g, vocab)
    if group in ATTRIBUTE_SLOTS:
        return [SetAttribute(node.id, group, value)]
    return [Relabel(node.id, value)]


def _handle_change_slot_to(match: re.Match[str], task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> list[PatchOp]:
    slot, value = match["slot"], match["value"]
    _check_target(slot, task, _SLOT_TO_TARGETS[task], slot)
    _slot_value(slot, value, vocab)

    if slot in _SCENE_WIDE_SLOTS:
        return [SetAttribute(node.id, slot, value) for node in g.nodes]
    if slot in ATTRIBUTE_SLOTS:
        return [SetAttribute(primary_node(g, task, vocab).id, slot, value)]

    for node in g.nodes:
        if vocab.group_of(node.name) == slot:
            return [Relabel(node.id, value)]
    if slot == "background":
        return [AddNode(ObjectNode.create(g.next_id(), value))]
    raise UnresolvedReferentError(f"the {slot}")


def _handle_add(match: re.Match[str], task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> list[PatchOp]:
    tokens = match["phrase"].split()
    vocab.check_tokens(tokens)
    name = _name_token(tokens[-1], vocab)
    attributes: dict[str, str] = {}
    for token in tokens[:-1]:
        group = vocab.group_of(token)
        if group not in ATTRIBUTE_SLOTS:
            raise InstructionError(f"'{token}' cannot describe a new {name}")
        attributes[group] = token

    new_node = ObjectNode.create(g.next_id(), name, attributes)
    ops: list[PatchOp] = [AddNode(new_node)]
    if match["relation"]:
        anchor = resolve_referent(match["ref"], task, g, vocab)
        ops.append(SetRelation(Relation(new_node.id, _RELATIONS[match["relation"]], anchor.id)))
    return ops


def _handle_remove(match: re.Match[str], task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> list[PatchOp]:
    return [RemoveNode(resolve_referent(match["ref"], task, g, vocab).id)]


REPLACE = InstructionForm(
    "replace",
    re.compile(rf"^replace {_REF} with {_ARTICLE}(?P<new>[a-z]+)$"),
    "replace (the)? <object> with (a|an)? <name>",
    _handle_replace,
)
CHANGE_SLOT_OF = InstructionForm(
    "change_slot_of",
    re.compile(rf"^change the (?P<slot>[a-z]+) of {_REF} to (?P<value>[a-z]+)$"),
    "change the <slot> of <object> to <value>",
    _handle_change_slot_of,
)
MAKE = InstructionForm(
    "make",
    re.compile(rf"^make {_REF} {_ARTICLE}(?P<value>[a-z]+)$"),
    "make (the)? <object> (a|an)? <value>",
    _handle_make,
)
CHANGE_SLOT_TO = InstructionForm(
    "change_slot_to",
    re.compile(rf"^change (?:the )?(?P<slot>[a-z]+) to {_ARTICLE}(?P<value>[a-z]+)$"),
    "change (the)? <slot> to <value>",
    _handle_change_slot_to,
)
ADD = InstructionForm(
    "add",
    re.compile(rf"^add {_ARTICLE}(?P<phrase>[a-z]+(?: [a-z]+)*?)(?: (?P<relation>on|under|beside|near|in|next to) {_REF})?$"),
    "add (a|an)? <value>* <name> ((on|under|beside|near|in|next to) <object>)?",
    _handle_add,
)
REMOVE = InstructionForm(
    "remove",
    re.compile(rf"^remove {_REF}$"),
    "remove (the)? <object>",
    _handle_remove,
)

# Corrective feedback is phrased in these forms, so every task accepts them.
SHARED_FORMS: tuple[InstructionForm, ...] = (REPLACE, CHANGE_SLOT_OF)

TASK_FORMS: dict[TaskType, tuple[InstructionForm, ...]] = {
    TaskType.SUBJECT_REPLACE: (REPLACE,),
    TaskType.COLOR_ALTER: (MAKE, CHANGE_SLOT_OF),
    TaskType.MATERIAL_ALTER: (MAKE, CHANGE_SLOT_OF),
    TaskType.SUBJECT_ADD: (ADD,),
    TaskType.SUBJECT_REMOVE: (REMOVE,),
    TaskType.STYLE_CHANGE: (CHANGE_SLOT_TO,),
    TaskType.TONE_TRANSFER: (CHANGE_SLOT_TO,),
    TaskType.BACKGROUND_CHANGE: (CHANGE_SLOT_TO,),
    TaskType.MOTION_CHANGE: (CHANGE_SLOT_TO, MAKE),
    TaskType.PS_HUMAN: (MAKE, CHANGE_SLOT_TO),
}


def forms_for_task(task: TaskType) -> tuple[InstructionForm, ...]:
    own = TASK_FORMS.get(task, ())
    return own + tuple(form for form in SHARED_FORMS if form not in own)


def normalize_instruction(q: str) -> str:
    text = q.strip().rstrip(".!").replace(",", " ")
    return " ".join(text.lower().split())


def split_clauses(q: str) -> list[str]:
    return [clause.strip() for clause in re.split(r"\band\b", normalize_instruction(q))]


def _is_noop(op: PatchOp, g: SceneGraph) -> bool:
    if isinstance(op, Relabel):
        return g.node(op.node_id).name == op.name
    if isinstance(op, SetAttribute):
        return g.node(op.node_id).get(op.slot) == op.token
    return False


def _parse_clause(clause: str, task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> list[PatchOp]:
    forms = forms_for_task(task)
    for form in forms:
        match = form.pattern.match(clause)
        if match:
            logger.debug(f"Clause '{clause}' matched the '{form.name}' form")
            return form.handler(match, task, g, vocab)
    raise GrammarError(clause, task, [form.template for form in forms])


def parse_instruction(q: str, task: TaskType, g: SceneGraph, vocab: ConceptVocabulary) -> GraphPatch:
    """
    Parse an edit instruction into the patch that realizes it on g.

    Clauses joined by "and" are applied in order, each against the graph the
    previous clauses produced. Ops that would change nothing are dropped.
    """
    if task is TaskType.TEXT_CHANGE:
        clause = normalize_instruction(q)
        if not _TEXT_CHANGE_PATTERN.match(clause):
            raise GrammarError(clause, task, [_TEXT_CHANGE_TEMPLATE])
        raise UnsupportedTaskError(task)

    clauses = split_clauses(q)
    logger.debug(f"Semantic decomposition: {clauses}")

    current = g
    ops: list[PatchOp] = []
    for clause in clauses:
        if not clause:
            raise GrammarError(clause, task, [form.template for form in forms_for_task(task)])
        for op in _parse_clause(clause, task, current, vocab):
            if _is_noop(op, current):
                continue
            current = apply_patch(current, GraphPatch([op]))
            ops.append(op)

    patch = GraphPatch(ops)
    logger.debug(f"Instruction mapping: {patch!r}")
    return patch


# token replacements


class Replacement(NamedTuple):
    """
    One token edit against the source caption.

    (i, old, new) substitutes, (i, old, None) deletes and (i, None, new) inserts
    before source position i.
    """

    position: int
    old: Optional[str]
    new: Optional[str]

    def to_json(self) -> list[JSON_TYPE]:
        return [self.position, self.old, self.new]


def compute_replacements(caption_src: Sequence[str], caption_tar: Sequence[str]) -> list[Replacement]:
    """Minimal token edits (substitutions, deletions, insertions) turning caption_src into caption_tar."""
    n, m = len(caption_src), len(caption_tar)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            substitution = dist[i - 1][j - 1] + (caption_src[i - 1] != caption_tar[j - 1])
            dist[i][j] = min(substitution, dist[i - 1][j] + 1, dist[i][j - 1] + 1)

    edits: list[Replacement] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (caption_src[i - 1] != caption_tar[j - 1]):
            if caption_src[i - 1] != caption_tar[j - 1]:
                edits.append(Replacement(i - 1, caption_src[i - 1], caption_tar[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            edits.append(Replacement(i - 1, caption_src[i - 1], None))
            i -= 1
        else:
            edits.append(Replacement(i, None, caption_tar[j - 1]))
            j -= 1

    edits.reverse()
    return edits


def apply_replacements(caption: Sequence[str], replacements: Sequence[Replacement]) -> list[str]:
    insertions: dict[int, list[str]] = {}
    changes: dict[int, Replacement] = {}
    for r in replacements:
        if r.old is None:
            if r.new is None:
                raise ValueError(f"Empty replacement at position {r.position}")
            insertions.setdefault(r.position, []).append(r.new)
            continue
        if not 0 <= r.position < len(caption) or caption[r.position] != r.old:
            raise ValueError(f"Replacement {tuple(r)} does not match the caption")
        changes[r.position] = r

    result: list[str] = []
    for i in range(len(caption) + 1):
        result.extend(insertions.get(i, ()))
        if i == len(caption):
            break
        change = changes.get(i)
        if change is None:
            result.append(caption[i])
        elif change.new is not None:
            result.append(change.new)
    return result


# edit plans


class EditPlan(NamedTuple):
    graph_src: SceneGraph
    graph_tar: SceneGraph
    caption_src: list[str]
    caption_tar: list[str]
    replacements: list[Replacement]
    patch: GraphPatch
    task: TaskType
    instruction: str = ""

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "instruction": self.instruction,
            "task": self.task.value,
            "graph_src": self.graph_src.to_json(),
            "graph_tar": self.graph_tar.to_json(),
            "caption_src": list(self.caption_src),
            "caption_tar": list(self.caption_tar),
            "replacements": [r.to_json() for r in self.replacements],
            "patch": self.patch.to_json(),
        }


def build_edit_plan(g: SceneGraph, q: str, task: TaskType, vocab: ConceptVocabulary) -> EditPlan:
    """Run the understanding stages: source caption, instruction patch, target graph and caption, token replacements."""
    if not g.nodes:
        raise InstructionError("The scene has no objects to edit")
    g.check_vocabulary(vocab)
    caption_src = caption_from_graph(g, task)
    logger.debug(f"Visual analysis: {' '.join(caption_src)!r}")

    patch = parse_instruction(q, task, g, vocab)
    graph_tar = apply_patch(g, patch)
    if not graph_tar.nodes:
        raise InstructionError("The edit would leave the scene without objects")
    caption_tar = caption_from_graph(graph_tar, task)
    logger.debug(f"Target construction: {' '.join(caption_tar)!r}")

    return EditPlan(
        graph_src=g,
        graph_tar=graph_tar,
        caption_src=caption_src,
        caption_tar=caption_tar,
        replacements=compute_replacements(caption_src, caption_tar),
        patch=patch,
        task=task,
        instruction=q,
    )
