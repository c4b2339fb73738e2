"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import itertools
from typing import TYPE_CHECKING, NamedTuple, Optional, Union

from .semantic_space import SLOT_PLACEHOLDERS
from .task_types import REQUIRED_SLOTS, ordered_slots, slot_sort_key

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator, Mapping, Sequence
    from .semantic_space import ConceptVocabulary
    from .task_types import TaskType
    from .utilities import JSON_TYPE


EXHAUSTIVE_MATCHING_MAX_NODES = 6


class SceneGraphError(ValueError):
    pass


class ObjectNode(NamedTuple):
    """Scene object: a concept name plus attribute slots, stored in canonical slot order."""

    id: int
    name: str
    attributes: tuple[tuple[str, str], ...] = ()

    @classmethod
    def create(cls, node_id: int, name: str, attributes: Optional[Mapping[str, str]] = None) -> ObjectNode:
        attributes = attributes or {}
        return cls(node_id, name, tuple((slot, attributes[slot]) for slot in ordered_slots(attributes)))

    @property
    def attribute_map(self) -> dict[str, str]:
        return dict(self.attributes)

    def get(self, slot: str) -> str | None:
        for key, value in self.attributes:
            if key == slot:
                return value
        return None

    def with_name(self, name: str) -> ObjectNode:
        return self._replace(name=name)

    def with_attribute(self, slot: str, token: str) -> ObjectNode:
        attributes = self.attribute_map
        attributes[slot] = token
        return ObjectNode.create(self.id, self.name, attributes)

    def without_attribute(self, slot: str) -> ObjectNode:
        attributes = self.attribute_map
        del attributes[slot]
        return ObjectNode.create(self.id, self.name, attributes)

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {"id": self.id, "name": self.name, "attributes": dict(self.attributes)}


class Relation(NamedTuple):
    subject: int
    relation: str
    obj: int

    def to_json(self) -> list[JSON_TYPE]:
        return [self.subject, self.relation, self.obj]


class AddNode(NamedTuple):
    node: ObjectNode


class RemoveNode(NamedTuple):
    node_id: int


class Relabel(NamedTuple):
    node_id: int
    name: str


class SetAttribute(NamedTuple):
    node_id: int
    slot: str
    token: str


class ClearAttribute(NamedTuple):
    node_id: int
    slot: str


class SetRelation(NamedTuple):
    edge: Relation


class RemoveRelation(NamedTuple):
    edge: Relation


PatchOp = Union[AddNode, RemoveNode, Relabel, SetAttribute, ClearAttribute, SetRelation, RemoveRelation]

_OP_NAMES: dict[type, str] = {
    AddNode: "add_node",
    RemoveNode: "remove_node",
    Relabel: "relabel",
    SetAttribute: "set_attribute",
    ClearAttribute: "clear_attribute",
    SetRelation: "set_relation",
    RemoveRelation: "remove_relation",
}


def op_to_json(op: PatchOp) -> dict[str, JSON_TYPE]:
    data: dict[str, JSON_TYPE] = {"op": _OP_NAMES[type(op)]}
    if isinstance(op, AddNode):
        data["node"] = op.node.to_json()
    elif isinstance(op, (SetRelation, RemoveRelation)):
        data["edge"] = op.edge.to_json()
    else:
        data.update(op._asdict())
    return data


def op_from_json(data: Mapping[str, JSON_TYPE]) -> PatchOp:
    kind = data.get("op")
    try:
        if kind == "add_node":
            return AddNode(_node_from_json(data["node"]))
        if kind == "remove_node":
            return RemoveNode(int(data["node_id"]))  # type: ignore[arg-type]
        if kind == "relabel":
            return Relabel(int(data["node_id"]), str(data["name"]))  # type: ignore[arg-type]
        if kind == "set_attribute":
            return SetAttribute(int(data["node_id"]), str(data["slot"]), str(data["token"]))  # type: ignore[arg-type]
        if kind == "clear_attribute":
            return ClearAttribute(int(data["node_id"]), str(data["slot"]))  # type: ignore[arg-type]
        if kind == "set_relation":
            return SetRelation(_edge_from_json(data["edge"]))
        if kind == "remove_relation":
            return RemoveRelation(_edge_from_json(data["edge"]))
    except (KeyError, TypeError, ValueError) as e:
        raise SceneGraphError(f"Malformed patch op {dict(data)!r}: {e!r}") from e
    raise SceneGraphError(f"Unknown patch op '{kind}'")


def op_entity(op: PatchOp) -> tuple[int, str]:
    """The (node id, slot or 'name' / 'node' / 'edge') entity an op acts on."""
    if isinstance(op, AddNode):
        return (op.node.id, "node")
    if isinstance(op, RemoveNode):
        return (op.node_id, "node")
    if isinstance(op, Relabel):
        return (op.node_id, "name")
    if isinstance(op, (SetAttribute, ClearAttribute)):
        return (op.node_id, op.slot)
    return (op.edge.subject, "edge")


class GraphPatch:
    """Ordered list of graph update operations."""

    def __init__(self, ops: Iterable[PatchOp] = ()) -> None:
        self._ops: tuple[PatchOp, ...] = tuple(ops)

    @property
    def ops(self) -> tuple[PatchOp, ...]:
        return self._ops

    def __len__(self) -> int:
        return len(self._ops)

    def __iter__(self) -> Iterator[PatchOp]:
        return iter(self._ops)

    def __bool__(self) -> bool:
        return bool(self._ops)

    def __add__(self, other: GraphPatch) -> GraphPatch:
        return GraphPatch(self._ops + other.ops)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphPatch):
            return NotImplemented
        return self._ops == other.ops

    def __hash__(self) -> int:
        return hash(self._ops)

    def __repr__(self) -> str:
        return f"GraphPatch({list(self._ops)!r})"

    def touched_nodes(self) -> set[int]:
        touched: set[int] = set()
        for op in self._ops:
            if isinstance(op, (SetRelation, RemoveRelation)):
                touched.update((op.edge.subject, op.edge.obj))
            else:
                touched.add(op_entity(op)[0])
        return touched

    def to_json(self) -> list[JSON_TYPE]:
        return [op_to_json(op) for op in self._ops]

    @classmethod
    def from_json(cls, data: Sequence[JSON_TYPE]) -> GraphPatch:
        return cls(op_from_json(item) for item in data)  # type: ignore[arg-type]


class InapplicablePatchError(SceneGraphError):
    """A patch op that cannot be applied to the graph at its position in the patch."""

    def __init__(self, op_index: int, op: PatchOp, reason: str) -> None:
        super().__init__(f"Patch op #{op_index} {op!r} is not applicable: {reason}")
        self.op_index = op_index
        self.op = op
        self.reason = reason


class SceneGraph:
    """Objects with attribute slots plus directed relation edges."""

    def __init__(self, nodes: Iterable[ObjectNode] = (), edges: Iterable[Relation] = ()) -> None:
        self._nodes: tuple[ObjectNode, ...] = tuple(nodes)
        self._edges: tuple[Relation, ...] = tuple(edges)
        self._index: dict[int, ObjectNode] = {}

        for node in self._nodes:
            if node.id in self._index:
                raise SceneGraphError(f"Duplicate node id {node.id}")
            slots = [slot for slot, _ in node.attributes]
            if len(set(slots)) != len(slots):
                raise SceneGraphError(f"Node {node.id} has more than one value for a slot")
            self._index[node.id] = node

        seen: set[Relation] = set()
        for edge in self._edges:
            if edge.subject not in self._index or edge.obj not in self._index:
                raise SceneGraphError(f"Edge {edge.to_json()} references a missing node")
            if edge.subject == edge.obj:
                raise SceneGraphError(f"Self-loop edge on node {edge.subject}")
            if edge in seen:
                raise SceneGraphError(f"Duplicate edge {edge.to_json()}")
            seen.add(edge)

    @property
    def nodes(self) -> tuple[ObjectNode, ...]:
        return self._nodes

    @property
    def edges(self) -> tuple[Relation, ...]:
        return self._edges

    def has_node(self, node_id: int) -> bool:
        return node_id in self._index

    def node(self, node_id: int) -> ObjectNode:
        try:
            return self._index[node_id]
        except KeyError:
            raise SceneGraphError(f"No node with id {node_id}") from None

    def next_id(self) -> int:
        return max(self._index, default=-1) + 1

    def find_nodes(self, name: str) -> list[ObjectNode]:
        return [node for node in self._nodes if node.name == name]

    def tokens(self) -> list[str]:
        """Every concept token used by the graph (names and attribute values)."""
        return [token for node in self._nodes for token in (node.name, *(value for _, value in node.attributes))]

    def check_vocabulary(self, vocab: ConceptVocabulary) -> None:
        vocab.check_tokens(self.tokens())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return self._nodes == other.nodes and self._edges == other.edges

    def __hash__(self) -> int:
        return hash((self._nodes, self._edges))

    def __repr__(self) -> str:
        return f"SceneGraph(nodes={list(self._nodes)!r}, edges={list(self._edges)!r})"

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "nodes": [node.to_json() for node in self._nodes],
            "edges": [edge.to_json() for edge in self._edges],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, JSON_TYPE]) -> SceneGraph:
        raw_nodes = data.get("nodes", [])
        raw_edges = data.get("edges", [])
        if not isinstance(raw_nodes, list) or not isinstance(raw_edges, list):
            raise SceneGraphError("Scene graph 'nodes' and 'edges' must be lists")
        return cls([_node_from_json(item) for item in raw_nodes], [_edge_from_json(item) for item in raw_edges])


def _node_from_json(data: JSON_TYPE) -> ObjectNode:
    if not isinstance(data, dict):
        raise SceneGraphError(f"Node must be an object, got {data!r}")
    try:
        attributes = data.get("attributes") or {}
        if not isinstance(attributes, dict):
            raise SceneGraphError(f"Node attributes must be an object, got {attributes!r}")
        values = {str(k): str(v) for k, v in attributes.items()}
        return ObjectNode.create(int(data["id"]), str(data["name"]), values)  # type: ignore[arg-type]
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, SceneGraphError):
            raise
        raise SceneGraphError(f"Malformed node {data!r}: {e!r}") from e


def _edge_from_json(data: JSON_TYPE) -> Relation:
    if not isinstance(data, list) or len(data) != 3:
        raise SceneGraphError(f"Edge must be a [subject, relation, object] list, got {data!r}")
    try:
        return Relation(int(data[0]), str(data[1]), int(data[2]))  # type: ignore[arg-type]
    except (TypeError, ValueError) as e:
        raise SceneGraphError(f"Malformed edge {data!r}: {e!r}") from e


# captions


def caption_from_graph(g: SceneGraph, task: TaskType | None = None) -> list[str]:
    """
    Describe the graph with the fixed caption template.

    Each node becomes "a <attributes...> <name>" (canonical slot order), nodes are
    separated by ".", and each edge appends ". <subject> <relation> <object>".
    Slots required by the task are always emitted, with a placeholder when unset.
    """
    forced = REQUIRED_SLOTS.get(task, ()) if task is not None else ()
    tokens: list[str] = []

    for position, node in enumerate(g.nodes):
        if position:
            tokens.append(".")
        values = node.attribute_map
        for slot in forced:
            values.setdefault(slot, SLOT_PLACEHOLDERS[slot])
        tokens.append("a")
        tokens.extend(values[slot] for slot in ordered_slots(values))
        tokens.append(node.name)

    for edge in g.edges:
        tokens.extend((".", g.node(edge.subject).name, edge.relation, g.node(edge.obj).name))

    return tokens


# patch application


def apply_patch(g: SceneGraph, patch: GraphPatch) -> SceneGraph:
    """Apply the ops in order and return a new graph; edges no op touches are kept as-is."""

    nodes: list[ObjectNode] = list(g.nodes)
    edges: list[Relation] = list(g.edges)

    def position(node_id: int) -> int | None:
        for i, node in enumerate(nodes):
            if node.id == node_id:
                return i
        return None

    for index, op in enumerate(patch):
        if isinstance(op, AddNode):
            if position(op.node.id) is not None:
                raise InapplicablePatchError(index, op, f"node id {op.node.id} already exists")
            nodes.append(op.node)
        elif isinstance(op, RemoveNode):
            i = position(op.node_id)
            if i is None:
                raise InapplicablePatchError(index, op, f"no node with id {op.node_id}")
            del nodes[i]
            edges = [edge for edge in edges if op.node_id not in (edge.subject, edge.obj)]
        elif isinstance(op, Relabel):
            i = position(op.node_id)
            if i is None:
                raise InapplicablePatchError(index, op, f"no node with id {op.node_id}")
            nodes[i] = nodes[i].with_name(op.name)
        elif isinstance(op, SetAttribute):
            i = position(op.node_id)
            if i is None:
                raise InapplicablePatchError(index, op, f"no node with id {op.node_id}")
            nodes[i] = nodes[i].with_attribute(op.slot, op.token)
        elif isinstance(op, ClearAttribute):
            i = position(op.node_id)
            if i is None:
                raise InapplicablePatchError(index, op, f"no node with id {op.node_id}")
            if nodes[i].get(op.slot) is None:
                raise InapplicablePatchError(index, op, f"node {op.node_id} has no '{op.slot}' slot")
            nodes[i] = nodes[i].without_attribute(op.slot)
        elif isinstance(op, SetRelation):
            edge = op.edge
            if position(edge.subject) is None or position(edge.obj) is None:
                raise InapplicablePatchError(index, op, "edge references a missing node")
            if edge.subject == edge.obj:
                raise InapplicablePatchError(index, op, "self-loop edge")
            if edge in edges:
                raise InapplicablePatchError(index, op, "edge already exists")
            edges.append(edge)
        elif isinstance(op, RemoveRelation):
            if op.edge not in edges:
                raise InapplicablePatchError(index, op, "edge does not exist")
            edges.remove(op.edge)
        else:
            raise InapplicablePatchError(index, op, "unknown op type")

    return SceneGraph(nodes, edges)


# diffs


class _Matching(NamedTuple):
    pairs: dict[int, int]  # src node id -> tar node id
    cost: int
    name_matches: int
    overlap: int


def _node_op_count(src: ObjectNode, tar: ObjectNode) -> int:
    count = int(src.name != tar.name)
    src_attributes = src.attribute_map
    tar_attributes = tar.attribute_map
    for slot in set(src_attributes) | set(tar_attributes):
        if src_attributes.get(slot) != tar_attributes.get(slot):
            count += 1
    return count


def _attribute_overlap(src: ObjectNode, tar: ObjectNode) -> int:
    return len(set(src.attributes) & set(tar.attributes))


def _evaluate(src: SceneGraph, tar: SceneGraph, pairs: dict[int, int]) -> _Matching:
    cost = 0
    name_matches = 0
    overlap = 0
    for src_id, tar_id in pairs.items():
        src_node, tar_node = src.node(src_id), tar.node(tar_id)
        cost += _node_op_count(src_node, tar_node)
        name_matches += int(src_node.name == tar_node.name)
        overlap += _attribute_overlap(src_node, tar_node)

    cost += (len(src.nodes) - len(pairs)) + (len(tar.nodes) - len(pairs))

    mapped = {
        Relation(pairs[edge.subject], edge.relation, pairs[edge.obj])
        for edge in src.edges
        if edge.subject in pairs and edge.obj in pairs
    }
    tar_edges = set(tar.edges)
    cost += len(mapped - tar_edges) + len(tar_edges - mapped)
    return _Matching(pairs, cost, name_matches, overlap)


def _better(candidate: _Matching, best: _Matching | None) -> bool:
    if best is None:
        return True
    return (candidate.cost, -candidate.name_matches, -candidate.overlap) < (best.cost, -best.name_matches, -best.overlap)


def _exhaustive_matching(src: SceneGraph, tar: SceneGraph) -> _Matching:
    src_ids = [node.id for node in src.nodes]
    tar_ids = [node.id for node in tar.nodes]
    best: _Matching | None = None

    # Enumerated in node order, so the first optimum found wins ties.
    def search(i: int, pairs: dict[int, int], used: set[int]) -> None:
        nonlocal best
        if i == len(src_ids):
            candidate = _evaluate(src, tar, dict(pairs))
            if _better(candidate, best):
                best = candidate
            return
        for tar_id in tar_ids:
            if tar_id not in used:
                pairs[src_ids[i]] = tar_id
                used.add(tar_id)
                search(i + 1, pairs, used)
                used.discard(tar_id)
                del pairs[src_ids[i]]
        search(i + 1, pairs, used)

    search(0, {}, set())
    assert best is not None
    return best


def _greedy_matching(src: SceneGraph, tar: SceneGraph) -> _Matching:
    pairs: dict[int, int] = {}
    used: set[int] = set()

    for src_node in src.nodes:
        candidates = [node for node in tar.nodes if node.id not in used and node.name == src_node.name]
        if candidates:
            chosen = max(candidates, key=lambda node: _attribute_overlap(src_node, node))
            pairs[src_node.id] = chosen.id
            used.add(chosen.id)

    leftover_tar = [node for node in tar.nodes if node.id not in used]
    for src_node in src.nodes:
        if src_node.id in pairs or not leftover_tar:
            continue
        # Pair only when cheaper than a remove plus an add.
        if _node_op_count(src_node, leftover_tar[0]) < 2:
            pairs[src_node.id] = leftover_tar.pop(0).id

    return _evaluate(src, tar, pairs)


def graph_diff(src: SceneGraph, tar: SceneGraph) -> GraphPatch:
    """
    Return a patch with the fewest ops that turns src into tar, up to node-id renaming.

    Nodes are matched by name, then attribute overlap, then node order. Small graphs
    are matched exhaustively so the op count is the true minimum.
    """
    if max(len(src.nodes), len(tar.nodes)) <= EXHAUSTIVE_MATCHING_MAX_NODES:
        matching = _exhaustive_matching(src, tar)
    else:
        matching = _greedy_matching(src, tar)

    pairs = matching.pairs
    tar_to_src = {tar_id: src_id for src_id, tar_id in pairs.items()}
    ops: list[PatchOp] = []
    tar_edges = set(tar.edges)

    for edge in src.edges:
        if edge.subject in pairs and edge.obj in pairs:
            if Relation(pairs[edge.subject], edge.relation, pairs[edge.obj]) not in tar_edges:
                ops.append(RemoveRelation(edge))

    ops.extend(RemoveNode(node.id) for node in src.nodes if node.id not in pairs)

    for src_node in src.nodes:
        if src_node.id in pairs and src_node.name != tar.node(pairs[src_node.id]).name:
            ops.append(Relabel(src_node.id, tar.node(pairs[src_node.id]).name))

    for src_node in src.nodes:
        if src_node.id not in pairs:
            continue
        src_attributes = src_node.attribute_map
        tar_attributes = tar.node(pairs[src_node.id]).attribute_map
        for slot in sorted(set(src_attributes) | set(tar_attributes), key=slot_sort_key):
            if slot in tar_attributes and src_attributes.get(slot) != tar_attributes[slot]:
                ops.append(SetAttribute(src_node.id, slot, tar_attributes[slot]))
            elif slot not in tar_attributes:
                ops.append(ClearAttribute(src_node.id, slot))

    id_map = dict(tar_to_src)
    fresh_ids = itertools.count(src.next_id())
    for tar_node in tar.nodes:
        if tar_node.id not in id_map:
            new_id = next(fresh_ids)
            id_map[tar_node.id] = new_id
            ops.append(AddNode(tar_node._replace(id=new_id)))

    mapped_src_edges = {
        Relation(pairs[edge.subject], edge.relation, pairs[edge.obj])
        for edge in src.edges
        if edge.subject in pairs and edge.obj in pairs
    }
    for edge in tar.edges:
        if edge not in mapped_src_edges:
            ops.append(SetRelation(Relation(id_map[edge.subject], edge.relation, id_map[edge.obj])))

    return GraphPatch(ops)


def _signature(node: ObjectNode) -> tuple[str, tuple[tuple[str, str], ...]]:
    return (node.name, node.attributes)


def graphs_equivalent(a: SceneGraph, b: SceneGraph) -> bool:
    """Structural equality up to renaming of node ids."""

    if len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    if sorted(map(_signature, a.nodes)) != sorted(map(_signature, b.nodes)):
        return False

    a_edges = set(a.edges)
    b_edges = set(b.edges)
    a_ids = [node.id for node in a.nodes]

    def consistent(mapping: dict[int, int], a_id: int) -> bool:
        for edge in a_edges:
            if a_id in (edge.subject, edge.obj) and edge.subject in mapping and edge.obj in mapping:
                if Relation(mapping[edge.subject], edge.relation, mapping[edge.obj]) not in b_edges:
                    return False
        return True

    def search(i: int, mapping: dict[int, int], used: set[int]) -> bool:
        if i == len(a_ids):
            return {Relation(mapping[e.subject], e.relation, mapping[e.obj]) for e in a_edges} == b_edges
        a_node = a.node(a_ids[i])
        for b_node in b.nodes:
            if b_node.id in used or _signature(b_node) != _signature(a_node):
                continue
            mapping[a_node.id] = b_node.id
            used.add(b_node.id)
            if consistent(mapping, a_node.id) and search(i + 1, mapping, used):
                return True
            used.discard(b_node.id)
            del mapping[a_node.id]
        return False

    return search(0, {}, set())
