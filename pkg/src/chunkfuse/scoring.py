"""Chunk scorers: one framed chunk in, one probability vector out.

Four implementations share the contract: a trainable linear bag-of-tokens
model (desk-scale stand-in for a fine-tuned encoder), a remote HTTP
scorer (see remote.py), a table-driven mock for tests, and a pattern
detector that fires on a contiguous token-id subsequence. The linear
scorer is order-blind within a chunk; the pattern scorer exists to
exercise behaviors that depend on token adjacency, such as signals
broken across chunk boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import sparse

from .chunker import Chunk
from .corpus import find_pattern
from .errors import ConfigError, ContractError

# Ids 0..3 are reserved (PAD/UNK/CLS/SEP) and never carry features.
FIRST_TEXT_ID = 4


@dataclass(frozen=True)
class ProbabilityVector:
    """Class distribution for one chunk or note."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.probs:
            raise ContractError("probability vector must be non-empty")
        if any(p < -1e-9 or p > 1 + 1e-9 for p in self.probs):
            raise ContractError(f"entries outside [0, 1]: {self.probs}")
        total = sum(self.probs)
        if abs(total - 1.0) > 1e-6:
            raise ContractError(f"probabilities sum to {total}, not 1")

    def __len__(self) -> int:
        return len(self.probs)

    @classmethod
    def uniform(cls, num_classes: int) -> "ProbabilityVector":
        return cls(probs=(1.0 / num_classes,) * num_classes)


class ScorerKind(Enum):
    LINEAR = "linear"
    REMOTE = "remote"
    MOCK = "mock"
    PATTERN = "pattern"


@dataclass(frozen=True)
class ScorerDescriptor:
    """Identity and wiring of one ensemble member."""

    scorer_id: str
    kind: ScorerKind
    num_classes: int
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ContractError("scorers need at least 2 classes")


@dataclass(frozen=True)
class TrainerConfig:
    """Optimization settings for the linear scorer.

    The default learning rate is 1e-2; encoder-style presets (1e-5) are
    far too small for a linear model to converge within max_epochs.
    """

    learning_rate: float = 1e-2
    weight_decay: float = 0.01
    max_epochs: int = 200
    early_stop_delta: float = 0.0001
    early_stop_patience: int = 3
    accumulation_steps: int = 10
    warmup_steps: int = 50
    batch_size: int = 18
    seed: int = 0

    def __post_init__(self) -> None:
        positives = {
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "early_stop_delta": self.early_stop_delta,
            "accumulation_steps": self.accumulation_steps,
            "warmup_steps": self.warmup_steps,
            "batch_size": self.batch_size,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")


@runtime_checkable
class ChunkScorer(Protocol):
    descriptor: ScorerDescriptor

    def score_chunk(self, chunk: Chunk) -> ProbabilityVector: ...


def score_chunks(scorer: ChunkScorer, chunks: Sequence[Chunk]) -> list[ProbabilityVector]:
    """Score a batch, using the scorer's native batch path when it has one."""
    batch = getattr(scorer, "score_batch", None)
    if batch is not None:
        return batch(chunks)
    return [scorer.score_chunk(c) for c in chunks]


@dataclass(frozen=True)
class MockScorer:
    """Deterministic lookup by chunk index; unlisted indices get the default."""

    descriptor: ScorerDescriptor
    table: dict[int, tuple[float, ...]]
    default: tuple[float, ...] | None = None

    def score_chunk(self, chunk: Chunk) -> ProbabilityVector:
        probs = self.table.get(chunk.index, self.default)
        if probs is None:
            raise ContractError(f"mock has no entry for chunk index {chunk.index}")
        if len(probs) != self.descriptor.num_classes:
            raise ContractError(
                f"mock table width {len(probs)} != {self.descriptor.num_classes} classes"
            )
        return ProbabilityVector(probs=tuple(probs))

    @classmethod
    def constant(cls, scorer_id: str, probs: Sequence[float]) -> "MockScorer":
        return cls(
            descriptor=ScorerDescriptor(
                scorer_id=scorer_id, kind=ScorerKind.MOCK, num_classes=len(probs)
            ),
            table={},
            default=tuple(probs),
        )


@dataclass(frozen=True)
class PatternScorer:
    """Binary detector for a contiguous id subsequence in chunk content.

    Contiguity makes it sensitive to chunk boundaries: a pattern split
    across two windows is invisible unless the overlap rejoins it.
    """

    descriptor: ScorerDescriptor
    pattern_ids: tuple[int, ...]
    hit: tuple[float, float] = (0.1, 0.9)
    miss: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self) -> None:
        if not self.pattern_ids:
            raise ContractError("pattern_ids must be non-empty")
        if self.descriptor.num_classes != 2:
            raise ContractError("pattern scorer is binary")

    def score_chunk(self, chunk: Chunk) -> ProbabilityVector:
        content = chunk.ids[1:-1]
        probs = self.hit if find_pattern(content, self.pattern_ids) else self.miss
        return ProbabilityVector(probs=probs)

    @classmethod
    def for_pattern(cls, scorer_id: str, pattern_ids: Sequence[int]) -> "PatternScorer":
        return cls(
            descriptor=ScorerDescriptor(
                scorer_id=scorer_id, kind=ScorerKind.PATTERN, num_classes=2
            ),
            pattern_ids=tuple(pattern_ids),
        )


def chunk_counts(chunk: Chunk, vocab_size: int) -> np.ndarray:
    """Bag-of-token-id counts; reserved ids contribute nothing."""
    counts = np.zeros(vocab_size, dtype=np.float64)
    for i in chunk.ids:
        if i >= vocab_size:
            raise ContractError(f"token id {i} outside vocabulary of {vocab_size}")
        if i >= FIRST_TEXT_ID:
            counts[i] += 1.0
    return counts


def chunks_to_csr(chunks: Sequence[Chunk], vocab_size: int) -> sparse.csr_matrix:
    """Stack count features for many chunks without densifying."""
    data, indices, indptr = [], [], [0]
    for chunk in chunks:
        row: dict[int, float] = {}
        for i in chunk.ids:
            if i >= vocab_size:
                raise ContractError(
                    f"token id {i} outside vocabulary of {vocab_size}"
                )
            if i >= FIRST_TEXT_ID:
                row[i] = row.get(i, 0.0) + 1.0
        cols = sorted(row)
        indices.extend(cols)
        data.extend(row[c] for c in cols)
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(chunks), vocab_size),
    )


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class LinearScorer:
    """Multinomial logistic regression over bag-of-token-id counts."""

    descriptor: ScorerDescriptor
    weights: np.ndarray  # (num_classes, vocab_size)
    bias: np.ndarray  # (num_classes,)
    trainer_config: TrainerConfig | None = None
    best_val_auroc: float | None = None

    def __post_init__(self) -> None:
        k = self.descriptor.num_classes
        if self.weights.shape[0] != k or self.bias.shape != (k,):
            raise ContractError(
                f"weight shape {self.weights.shape}/{self.bias.shape}"
                f" inconsistent with {k} classes"
            )

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def untrained(
        cls, scorer_id: str, vocab_size: int, num_classes: int
    ) -> "LinearScorer":
        return cls(
            descriptor=ScorerDescriptor(
                scorer_id=scorer_id, kind=ScorerKind.LINEAR, num_classes=num_classes
            ),
            weights=np.zeros((num_classes, vocab_size)),
            bias=np.zeros(num_classes),
        )

    def score_chunk(self, chunk: Chunk) -> ProbabilityVector:
        return self.score_batch([chunk])[0]

    def score_batch(self, chunks: Sequence[Chunk]) -> list[ProbabilityVector]:
        features = chunks_to_csr(chunks, self.vocab_size)
        logits = features @ self.weights.T + self.bias
        rows = softmax_rows(np.asarray(logits))
        return [ProbabilityVector(probs=tuple(map(float, row))) for row in rows]

    def save(self, path: str | Path) -> None:
        """Checkpoint as one JSON document; identical scorers serialize to
        identical bytes, so determinism is checkable at the file level."""
        doc = {
            "vocab_size": self.vocab_size,
            "num_classes": self.descriptor.num_classes,
            "scorer_id": self.descriptor.scorer_id,
            "weights": [float(w) for w in self.weights.ravel()],
            "bias": [float(b) for b in self.bias],
            "trainer_config": (
                None if self.trainer_config is None else vars(self.trainer_config)
            ),
            "best_val_auroc": self.best_val_auroc,
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "LinearScorer":
        doc = json.loads(Path(path).read_text())
        k, v = doc["num_classes"], doc["vocab_size"]
        config = doc.get("trainer_config")
        return cls(
            descriptor=ScorerDescriptor(
                scorer_id=doc.get("scorer_id", "linear"),
                kind=ScorerKind.LINEAR,
                num_classes=k,
            ),
            weights=np.array(doc["weights"], dtype=np.float64).reshape(k, v),
            bias=np.array(doc["bias"], dtype=np.float64),
            trainer_config=None if config is None else TrainerConfig(**config),
            best_val_auroc=doc.get("best_val_auroc"),
        )
