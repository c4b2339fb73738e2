"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, NamedTuple, Optional

import numpy as np

from .instruction_parser import ORDINAL_WORDS
from .scene_graph import ObjectNode, SceneGraph, caption_from_graph
from .semantic_space import SCORE_MAX, cosine, embed_prompt, similarity_score

if TYPE_CHECKING:
    from .dse_engine import StepRecord
    from .semantic_space import ConceptVocabulary, PromptEmbedding
    from .utilities import JSON_TYPE


DEFAULT_THRESHOLD_SIGMA = 9.0
DEFAULT_PATIENCE_WINDOW = 8
DEFAULT_MIN_IMPROVEMENT = 1e-3

# Cosines are rounded before ranking so near-equal concepts tie deterministically.
TIE_DECIMALS = 9

NAME_KEY = "name"

logger = logging.getLogger(__name__)


class VerifierConfig(NamedTuple):
    threshold_sigma: float = DEFAULT_THRESHOLD_SIGMA
    patience_window: int = DEFAULT_PATIENCE_WINDOW
    min_improvement: float = DEFAULT_MIN_IMPROVEMENT
    prefer_latest_best: bool = False

    def validate(self) -> VerifierConfig:
        if self.threshold_sigma < 0.0:
            raise ValueError(f"threshold_sigma must be non-negative, got {self.threshold_sigma}")
        if self.threshold_sigma > SCORE_MAX:
            logger.warning(f"threshold_sigma {self.threshold_sigma} exceeds the maximum score {SCORE_MAX} and can never be met")
        if self.patience_window < 1:
            raise ValueError(f"patience_window must be at least 1, got {self.patience_window}")
        if self.min_improvement < 0.0:
            raise ValueError(f"min_improvement must be non-negative, got {self.min_improvement}")
        return self


class StopDecision(Enum):
    CONTINUE = "continue"
    STOP_EARLY = "stop_early"


@dataclass
class VerifierState:
    """Score history of one trajectory with its best step (first occurrence unless prefer_latest)."""

    history: list[float] = field(default_factory=list)
    best_score: float = float("-inf")
    best_step: int = -1
    best_latent: Optional[np.ndarray] = None

    def record(self, score: float, latent: np.ndarray, prefer_latest: bool = False) -> None:
        self.history.append(score)
        improved = score >= self.best_score if prefer_latest else score > self.best_score
        if improved:
            self.best_score = score
            self.best_step = len(self.history) - 1
            self.best_latent = np.array(latent, dtype=np.float64)


def score_step(z_edit: np.ndarray, c_tar: PromptEmbedding) -> float:
    return similarity_score(z_edit, c_tar)


def steps_since_improvement(history: list[float], min_improvement: float) -> int:
    """Number of scores after the last one that beat every earlier score by more than min_improvement."""
    anchor = 0
    running_max = history[0]
    for i in range(1, len(history)):
        if history[i] > running_max + min_improvement:
            anchor = i
        running_max = max(running_max, history[i])
    return len(history) - 1 - anchor


def should_stop(state: VerifierState, cfg: VerifierConfig) -> StopDecision:
    """Stop once the best score meets the threshold and the last patience_window scores brought no improvement."""
    if not state.history:
        raise ValueError("should_stop needs at least one score")
    if max(state.history) < cfg.threshold_sigma:
        return StopDecision.CONTINUE
    if steps_since_improvement(state.history, cfg.min_improvement) >= cfg.patience_window:
        return StopDecision.STOP_EARLY
    return StopDecision.CONTINUE


def first_stop_step(scores: list[float], cfg: VerifierConfig) -> int | None:
    """Replay a score sequence and return the first step at which the stop rule fires."""
    state = VerifierState()
    for k, score in enumerate(scores):
        state.history.append(score)
        if should_stop(state, cfg) is StopDecision.STOP_EARLY:
            return k
    return None


class Verifier:
    """Step observer for the editing integrator: tracks scores and requests an early stop."""

    def __init__(self, config: VerifierConfig) -> None:
        self.config = config
        self.state = VerifierState()
        self.decisions: list[StopDecision] = []
        self.logger = logging.getLogger(__name__)

    def reset(self) -> None:
        self.state = VerifierState()
        self.decisions = []

    def __call__(self, record: StepRecord) -> bool:
        self.state.record(record.score, record.z_edit, self.config.prefer_latest_best)
        decision = should_stop(self.state, self.config)
        self.decisions.append(decision)
        if decision is StopDecision.STOP_EARLY:
            self.logger.debug(f"Early stop at step {record.k}: best {self.state.best_score:.4f} at step {self.state.best_step}")
        return decision is StopDecision.STOP_EARLY


# dense feedback


class FeedbackEntry(NamedTuple):
    node_id: int
    key: str  # "name" or an attribute slot
    target: str
    observed: str
    residual: float

    @property
    def mismatched(self) -> bool:
        return self.observed != self.target

    def to_json(self) -> dict[str, JSON_TYPE]:
        return self._asdict()


class FeedbackVector(NamedTuple):
    entries: tuple[FeedbackEntry, ...]
    observed_graph: SceneGraph

    @property
    def residuals(self) -> dict[tuple[int, str], float]:
        return {(e.node_id, e.key): e.residual for e in self.entries}

    @property
    def worst(self) -> FeedbackEntry:
        if not self.entries:
            raise ValueError("Feedback vector is empty")
        return max(self.entries, key=lambda e: e.residual)

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {"entries": [e.to_json() for e in self.entries], "observed_graph": self.observed_graph.to_json()}


def _occurrences(g: SceneGraph) -> list[tuple[int, str, str]]:
    """(node index, key, token) for every name and filled slot, in node and slot order."""
    found: list[tuple[int, str, str]] = []
    for i, node in enumerate(g.nodes):
        found.append((i, NAME_KEY, node.name))
        found.extend((i, slot, value) for slot, value in node.attributes)
    return found


def decode_to_graph(z: np.ndarray, vocab: ConceptVocabulary, template: SceneGraph) -> SceneGraph:
    """
    Read a latent back into the template's structure.

    Per axis group holding N distinct template tokens, the N concepts closest to z
    are present. Template tokens that are present stay in place; the others take
    the remaining present concepts in order of decreasing cosine.
    Ties go to the lexicographically smaller token.
    """
    z = np.asarray(z, dtype=np.float64)
    occurrences = _occurrences(template)

    by_group: dict[str | None, list[str]] = {}
    for _, _, token in occurrences:
        distinct = by_group.setdefault(vocab.group_of(token), [])
        if token not in distinct:
            distinct.append(token)

    decoded: dict[str, str] = {}
    for group, distinct in by_group.items():
        ranked = sorted(vocab.members(group), key=lambda token: (-round(cosine(z, vocab.embedding(token)), TIE_DECIMALS), token))
        present = ranked[: len(distinct)]
        spare = [token for token in present if token not in distinct]
        for token in distinct:
            decoded[token] = token if token in present else spare.pop(0)

    nodes: list[ObjectNode] = []
    for node in template.nodes:
        attributes = {slot: decoded[value] for slot, value in node.attributes}
        nodes.append(ObjectNode.create(node.id, decoded[node.name], attributes))
    return SceneGraph(nodes, template.edges)


def _residual(z: np.ndarray, target: np.ndarray, concept: np.ndarray) -> float:
    observed = cosine(z, concept)
    expected = cosine(target, concept)
    if expected <= 0.0:
        return 1.0 - observed
    # Excess presence is not a mismatch.
    return max(0.0, 1.0 - observed / expected)


def compute_feedback(z_edit: np.ndarray, graph_tar: SceneGraph, vocab: ConceptVocabulary) -> FeedbackVector:
    """
    Residual per (node, name or slot) of graph_tar.

    A residual compares the latent's cosine to the concept with the cosine the
    target scene embedding itself has to that concept; 0 means fully present.
    """
    z_edit = np.asarray(z_edit, dtype=np.float64)
    target = embed_prompt(vocab, caption_from_graph(graph_tar)).values
    observed_graph = decode_to_graph(z_edit, vocab, graph_tar)

    entries: list[FeedbackEntry] = []
    for (i, key, token), (_, _, seen) in zip(_occurrences(graph_tar), _occurrences(observed_graph)):
        residual = _residual(z_edit, target, vocab.embedding(token))
        entries.append(FeedbackEntry(graph_tar.nodes[i].id, key, token, seen, residual))
    return FeedbackVector(tuple(entries), observed_graph)


def referent_phrase(node: ObjectNode, g: SceneGraph) -> str:
    """Shortest noun phrase that resolves to node in g: name, then attributes plus name, then an ordinal."""
    same_name = g.find_nodes(node.name)
    if same_name[0].id == node.id:
        return node.name

    values = [value for _, value in node.attributes]
    first = next(other for other in same_name if all(v in {value for _, value in other.attributes} for v in values))
    if first.id == node.id:
        return " ".join([*values, node.name])

    position = [other.id for other in same_name].index(node.id)
    if position >= len(ORDINAL_WORDS):
        raise ValueError(f"Node {node.id} is '{node.name}' number {position + 1}, past the last ordinal")
    return f"{ORDINAL_WORDS[position]} {node.name}"


def _article(token: str) -> str:
    return "an" if token[:1] in "aeiou" else "a"


def corrective_instruction(f: FeedbackVector, graph_tar: SceneGraph) -> str:
    """
    Phrase the worst remaining mismatch as an instruction against the observed graph.

    Mismatched entities are preferred; when everything decodes correctly the
    overall worst residual is targeted.
    """
    if not f.entries:
        raise ValueError("Feedback vector is empty")
    mismatched = [e for e in f.entries if e.mismatched]
    worst = max(mismatched or f.entries, key=lambda e: e.residual)

    if not graph_tar.has_node(worst.node_id):
        raise ValueError(f"Feedback entry for node {worst.node_id} is not part of the target graph")
    observed_node = f.observed_graph.node(worst.node_id)
    referent = referent_phrase(observed_node, f.observed_graph)

    if worst.key == NAME_KEY:
        return f"replace the {referent} with {_article(worst.target)} {worst.target}"
    return f"change the {worst.key} of {referent} to {worst.target}"
