"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from types import MappingProxyType
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from .utilities import atomic_write_text, dumps_json, vector_from_json, vector_to_json

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator, Mapping, Sequence
    from .utilities import JSON_TYPE


DEFAULT_DIMENSION = 32
DEFAULT_WORLD_SEED = 0

DEFAULT_AXES: Mapping[str, tuple[str, ...]] = MappingProxyType({
    "gender": ("man", "woman"),
    "rank": ("royal", "common"),
    "color": ("red", "blue", "brown", "green"),
    "material": ("wood", "metal", "glass"),
    "pose": ("standing", "sitting", "running"),
    "style": ("photo", "painting", "sketch"),
    "tone": ("warm", "cool"),
    "background": ("beach", "forest", "city"),
    "objects": ("dog", "cat", "hat", "grass", "ball", "bird"),
})

RELATION_TOKENS: tuple[str, ...] = ("on", "under", "beside", "near", "in")

# Caption filler used for task-forced slots that have no value yet.
SLOT_PLACEHOLDERS: Mapping[str, str] = MappingProxyType({
    "color": "plain",
    "material": "ordinary",
    "pose": "still",
    "style": "natural",
    "tone": "neutral",
})

STOP_WORDS: frozenset[str] = frozenset(
    {"a", "an", "the", "of", "portrait", ".", ",", "and"} | set(RELATION_TOKENS) | set(SLOT_PLACEHOLDERS.values())
)

SCORE_MAX = 10.0
UNIT_NORM_TOLERANCE = 1e-9

logger = logging.getLogger(__name__)


class VocabularyError(ValueError):
    pass


class UnknownTokenError(VocabularyError, LookupError):
    """A concept token that is not part of the vocabulary."""

    def __init__(self, token: str) -> None:
        super().__init__(f"Unknown concept token '{token}'")
        self.token = token


class Latent(NamedTuple):
    """Latent vector tagged with its normalized diffusion time (1 = pure noise, 0 = data)."""

    values: np.ndarray
    time: float


class PromptEmbedding(NamedTuple):
    values: np.ndarray
    tokens: tuple[str, ...]

    @property
    def is_null(self) -> bool:
        return not bool(np.any(self.values))


def _block_sizes(dimension: int, counts: Sequence[int]) -> list[int]:
    """Split the coordinates into one contiguous block per axis group."""

    num_groups = len(counts)
    if num_groups == 0:
        return []
    if dimension < num_groups:
        raise VocabularyError(f"Dimension {dimension} is smaller than the number of axis groups ({num_groups})")

    if sum(counts) <= dimension:
        sizes = list(counts)
        for i in range(dimension - sum(counts)):
            sizes[i % num_groups] += 1
        return sizes

    base, remainder = divmod(dimension, num_groups)
    return [base + (1 if i < remainder else 0) for i in range(num_groups)]


def _unit(vector: np.ndarray) -> np.ndarray:
    return vector / np.linalg.norm(vector)


def _group_members(rng: np.random.Generator, block_size: int, num_members: int) -> np.ndarray:
    """Return (block_size, num_members) unit columns, orthonormal as far as the block allows."""

    draws = rng.standard_normal((block_size, num_members))
    num_orthogonal = min(block_size, num_members)
    q, r = np.linalg.qr(draws[:, :num_orthogonal])
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    columns = [q * signs]
    if num_members > num_orthogonal:
        extra = draws[:, num_orthogonal:]
        columns.append(extra / np.linalg.norm(extra, axis=0))
    return np.concatenate(columns, axis=1)


class ConceptVocabulary:
    """
    Named concept embeddings grouped into semantic axes.

    All embeddings are unit vectors. Tokens of one axis group occupy their own
    coordinate block, so distinct groups are orthogonal whenever the dimension
    allows a full block per group.
    """

    _dimension: int
    _seed: int
    _axes: Mapping[str, tuple[str, ...]]
    _embeddings: dict[str, np.ndarray]
    _group_of: dict[str, str]

    def __init__(
        self,
        dimension: int,
        seed: int,
        axes: Mapping[str, Sequence[str]],
        embeddings: Mapping[str, np.ndarray],
    ) -> None:
        if dimension < 1:
            raise VocabularyError(f"Dimension must be positive, got {dimension}")
        if dimension < len(axes):
            raise VocabularyError(f"Dimension {dimension} is smaller than the number of axis groups ({len(axes)})")

        self._dimension = dimension
        self._seed = seed
        self._group_of = {}
        frozen_axes: dict[str, tuple[str, ...]] = {}

        for group, members in axes.items():
            if len(set(members)) != len(members):
                raise VocabularyError(f"Axis group '{group}' contains duplicate tokens")
            for token in members:
                if token in self._group_of:
                    raise VocabularyError(f"Token '{token}' belongs to both '{self._group_of[token]}' and '{group}'")
                if token in STOP_WORDS:
                    raise VocabularyError(f"Token '{token}' is a stop word and cannot be a concept")
                self._group_of[token] = group
            frozen_axes[group] = tuple(members)

        self._axes = MappingProxyType(frozen_axes)
        self._embeddings = {}
        for token, values in embeddings.items():
            vector = np.array(values, dtype=np.float64)
            if vector.shape != (dimension,):
                raise VocabularyError(f"Embedding of '{token}' has shape {vector.shape}, expected ({dimension},)")
            if abs(float(np.linalg.norm(vector)) - 1.0) > UNIT_NORM_TOLERANCE:
                raise VocabularyError(f"Embedding of '{token}' is not a unit vector")
            vector.flags.writeable = False
            self._embeddings[token] = vector

        missing = [token for token in self._group_of if token not in self._embeddings]
        if missing:
            raise VocabularyError(f"Axis tokens without embedding: {', '.join(missing)}")

    @classmethod
    def build(
        cls,
        dimension: int = DEFAULT_DIMENSION,
        seed: int = DEFAULT_WORLD_SEED,
        axes: Mapping[str, Sequence[str]] | None = None,
        extra_tokens: Sequence[str] = (),
    ) -> ConceptVocabulary:
        """Construct a vocabulary deterministically from (dimension, seed, axes, extra tokens)."""

        if axes is None:
            axes = DEFAULT_AXES
        if dimension < 1:
            raise VocabularyError(f"Dimension must be positive, got {dimension}")

        rng = np.random.default_rng(seed)
        sizes = _block_sizes(dimension, [len(members) for members in axes.values()])
        embeddings: dict[str, np.ndarray] = {}

        offset = 0
        for (_group, members), block_size in zip(axes.items(), sizes):
            if members:
                block = _group_members(rng, block_size, len(members))
                for column, token in enumerate(members):
                    vector = np.zeros(dimension)
                    vector[offset:offset + block_size] = block[:, column]
                    embeddings[token] = vector
            offset += block_size

        for token in extra_tokens:
            if token in embeddings:
                raise VocabularyError(f"Extra token '{token}' is already an axis token")
            embeddings[token] = _unit(rng.standard_normal(dimension))

        return cls(dimension, seed, axes, embeddings)

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def axes(self) -> Mapping[str, tuple[str, ...]]:
        return self._axes

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self._embeddings)

    def __contains__(self, token: object) -> bool:
        return token in self._embeddings

    def __len__(self) -> int:
        return len(self._embeddings)

    def __iter__(self) -> Iterator[str]:
        return iter(self._embeddings)

    def embedding(self, token: str) -> np.ndarray:
        try:
            return self._embeddings[token]
        except KeyError:
            raise UnknownTokenError(token) from None

    def group_of(self, token: str) -> str | None:
        """Axis group of a token, or None for tokens outside every group."""
        if token not in self._embeddings:
            raise UnknownTokenError(token)
        return self._group_of.get(token)

    def members(self, group: str | None) -> tuple[str, ...]:
        """Tokens of an axis group; None selects the tokens outside every group."""
        if group is None:
            return tuple(token for token in self._embeddings if token not in self._group_of)
        try:
            return self._axes[group]
        except KeyError:
            raise VocabularyError(f"Unknown axis group '{group}'") from None

    def check_tokens(self, tokens: Iterable[str]) -> None:
        for token in tokens:
            if token not in self._embeddings:
                raise UnknownTokenError(token)

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "dimension": self._dimension,
            "seed": self._seed,
            "axes": {group: list(members) for group, members in self._axes.items()},
            "embeddings": {token: vector_to_json(vector) for token, vector in self._embeddings.items()},
        }

    @classmethod
    def from_json(cls, data: Mapping[str, JSON_TYPE]) -> ConceptVocabulary:
        """
        Load a vocabulary document and check it against a rebuild from (dimension, seed, axes).

        Raises VocabularyError when a stored embedding differs from the rebuilt one.
        """
        try:
            dimension = int(data["dimension"])  # type: ignore[arg-type]
            seed = int(data["seed"])  # type: ignore[arg-type]
            raw_axes = data["axes"]
            raw_embeddings = data["embeddings"]
        except (KeyError, TypeError, ValueError) as e:
            raise VocabularyError(f"Malformed vocabulary document: {e!r}") from e

        if not isinstance(raw_axes, dict) or not isinstance(raw_embeddings, dict):
            raise VocabularyError("Vocabulary 'axes' and 'embeddings' must be objects")

        axes = {str(group): [str(token) for token in members] for group, members in raw_axes.items()}  # type: ignore[union-attr]
        grouped = {token for members in axes.values() for token in members}
        extra_tokens = [token for token in raw_embeddings if token not in grouped]

        rebuilt = cls.build(dimension, seed, axes, extra_tokens)
        for token, raw_vector in raw_embeddings.items():
            stored = vector_from_json(raw_vector)
            if not np.array_equal(stored, rebuilt.embedding(token)):
                raise VocabularyError(f"Stored embedding of '{token}' does not match the rebuild from seed {seed}")
        return rebuilt

    def save(self, path: Path) -> Path:
        # Axis order drives the seeded construction, so keys keep insertion order.
        return atomic_write_text(path, dumps_json(self.to_json(), sort_keys=False))

    @classmethod
    def load(cls, path: Path) -> ConceptVocabulary:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise VocabularyError(f"World file {path} does not contain a JSON object")
        vocab = cls.from_json(data)
        logger.debug(f"Loaded vocabulary with {len(vocab)} concepts from {path}")
        return vocab


def content_tokens(caption: Iterable[str]) -> list[str]:
    return [token for token in caption if token not in STOP_WORDS]


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization; a trailing or free-standing '.' becomes its own token."""
    return text.lower().replace(".", " . ").split()


def embed_concept(vocab: ConceptVocabulary, token: str) -> np.ndarray:
    return vocab.embedding(token)


def embed_prompt(vocab: ConceptVocabulary, caption: Sequence[str]) -> PromptEmbedding:
    """
    Embed a caption as the renormalized mean of its content-token embeddings.

    Stop-list tokens are skipped. A caption without content tokens maps to the
    zero vector, the null prompt used for classifier-free guidance.
    """
    tokens = tuple(caption)
    content = content_tokens(tokens)
    if not content:
        return PromptEmbedding(np.zeros(vocab.dimension), tokens)

    mean = np.mean([embed_concept(vocab, token) for token in content], axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        return PromptEmbedding(np.zeros(vocab.dimension), tokens)
    return PromptEmbedding(mean / norm, tokens)


def semantic_offset(vocab: ConceptVocabulary, add: str, remove: str) -> np.ndarray:
    return embed_concept(vocab, add) - embed_concept(vocab, remove)


def apply_semantic_offset(z: np.ndarray, vocab: ConceptVocabulary, add: str, remove: str, scale: float = 1.0) -> np.ndarray:
    """Direct vector-offset edit: shift z by scale * (e_add - e_remove)."""
    return np.asarray(z, dtype=np.float64) + scale * semantic_offset(vocab, add, remove)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"Dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("Cosine is undefined for a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def similarity_score(z: np.ndarray, p: PromptEmbedding) -> float:
    """Score in [0, 10]: 5 * (cos(z, p) + 1)."""
    if p.is_null:
        raise ValueError("Similarity against the null prompt is undefined")
    return 0.5 * SCORE_MAX * (cosine(np.asarray(z, dtype=np.float64), p.values) + 1.0)


def cosine_for_score(score: float) -> float:
    """Inverse of the score map: the cosine at which similarity_score equals score."""
    return 2.0 * score / SCORE_MAX - 1.0
