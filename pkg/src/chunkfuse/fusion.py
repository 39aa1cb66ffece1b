"""Combining per-chunk, per-model predictions into one note-level vector.

Two reductions over the chunk-by-model prediction matrix:

- weighted_fuse: convex-combine the models within each chunk using
  per-model weights, then average over chunks.
- ensemble_fuse: average each model over its chunks, then average the
  models; algebraically the uniform-weight case of weighted_fuse.

Both are plain averaging over probability vectors, so outputs stay on
the simplex by convexity. Weights are per-model; per-chunk weighting is
deliberately out of scope (uniform chunk treatment is the published
result path).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .chunker import ChunkingConfig, chunk
from .corpus import ClinicalNote
from .errors import ContractError, ScorerError
from .scoring import ChunkScorer, ProbabilityVector, score_chunks
from .tokenizer import Vocabulary, tokenize


@dataclass(frozen=True)
class PredictionMatrix:
    """Rectangular grid of vectors indexed [chunk][model]."""

    note_id: str
    entries: tuple[tuple[ProbabilityVector, ...], ...]

    def __post_init__(self) -> None:
        if not self.entries or not self.entries[0]:
            raise ContractError("prediction matrix must be non-empty")
        width = len(self.entries[0])
        if any(len(row) != width for row in self.entries):
            raise ContractError("prediction matrix must be rectangular")
        classes = {len(v) for row in self.entries for v in row}
        if len(classes) != 1:
            raise ContractError(f"mixed class counts in matrix: {classes}")

    @property
    def num_chunks(self) -> int:
        return len(self.entries)

    @property
    def num_models(self) -> int:
        return len(self.entries[0])

    def to_array(self) -> np.ndarray:
        """(chunks, models, classes) float array."""
        return np.array(
            [[v.probs for v in row] for row in self.entries], dtype=np.float64
        )


class AggregationMode(Enum):
    MEAN = "mean"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class FusionSpec:
    """Per-model weights plus bookkeeping for experiment reports.

    Weights are normalized at construction, so any non-negative vector
    with positive mass is accepted.
    """

    model_weights: tuple[float, ...]
    aggregation: AggregationMode = AggregationMode.MEAN
    with_overlap: bool = True

    def __post_init__(self) -> None:
        if not self.model_weights:
            raise ContractError("model_weights must be non-empty")
        if any(w < 0 for w in self.model_weights):
            raise ContractError(f"negative model weight in {self.model_weights}")
        total = sum(self.model_weights)
        if total <= 0:
            raise ContractError("model weights must have positive mass")
        if abs(total - 1.0) > 1e-9:
            object.__setattr__(
                self, "model_weights", tuple(w / total for w in self.model_weights)
            )

    @classmethod
    def uniform(cls, num_models: int, with_overlap: bool = True) -> "FusionSpec":
        return cls(
            model_weights=(1.0 / num_models,) * num_models,
            aggregation=AggregationMode.MEAN,
            with_overlap=with_overlap,
        )

    def to_json_dict(self) -> dict:
        return {
            "model_weights": list(self.model_weights),
            "aggregation": self.aggregation.value,
            "with_overlap": self.with_overlap,
        }


@dataclass(frozen=True)
class NotePrediction:
    """Fused note-level answer plus per-model aggregates for reporting."""

    note_id: str
    fused: ProbabilityVector
    per_model_aggregates: tuple[ProbabilityVector, ...]
    num_chunks: int
    fusion_spec: FusionSpec | None = None
    per_chunk: PredictionMatrix | None = None

    def to_json_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "fused": list(self.fused.probs),
            "per_model": [list(v.probs) for v in self.per_model_aggregates],
            "num_chunks": self.num_chunks,
            "fusion_spec": (
                None if self.fusion_spec is None else self.fusion_spec.to_json_dict()
            ),
        }


def _vector(row: np.ndarray) -> ProbabilityVector:
    return ProbabilityVector(probs=tuple(map(float, row)))


def aggregate_chunks(preds: Sequence[ProbabilityVector]) -> ProbabilityVector:
    """Element-wise mean over chunk vectors."""
    if not preds:
        raise ContractError("cannot aggregate zero chunk predictions")
    if len({len(p) for p in preds}) != 1:
        raise ContractError("chunk predictions disagree on class count")
    return _vector(np.mean([p.probs for p in preds], axis=0))


def weighted_fuse(matrix: PredictionMatrix, spec: FusionSpec) -> NotePrediction:
    """Convex-combine models within each chunk, then average over chunks."""
    if len(spec.model_weights) != matrix.num_models:
        raise ContractError(
            f"{len(spec.model_weights)} weights for {matrix.num_models} models"
        )
    arr = matrix.to_array()
    weights = np.array(spec.model_weights)
    per_chunk_combined = np.einsum("kpc,p->kc", arr, weights)
    fused = per_chunk_combined.mean(axis=0)
    per_model = arr.mean(axis=0)
    return NotePrediction(
        note_id=matrix.note_id,
        fused=_vector(fused),
        per_model_aggregates=tuple(_vector(row) for row in per_model),
        num_chunks=matrix.num_chunks,
        fusion_spec=spec,
        per_chunk=matrix,
    )


def ensemble_fuse(matrix: PredictionMatrix) -> NotePrediction:
    """Average each model over its chunks, then average the models.

    Kept as its own reduction (rather than delegating to weighted_fuse
    with uniform weights) so the equivalence of the two orderings stays
    independently testable.
    """
    arr = matrix.to_array()
    per_model = arr.mean(axis=0)
    fused = per_model.mean(axis=0)
    return NotePrediction(
        note_id=matrix.note_id,
        fused=_vector(fused),
        per_model_aggregates=tuple(_vector(row) for row in per_model),
        num_chunks=matrix.num_chunks,
        fusion_spec=FusionSpec.uniform(matrix.num_models),
        per_chunk=matrix,
    )


def score_matrix(
    note: ClinicalNote,
    scorers: Sequence[ChunkScorer],
    chunking: ChunkingConfig,
    vocab: Vocabulary,
) -> PredictionMatrix:
    """Tokenize, window, and score every (chunk, model) pair."""
    if not scorers:
        raise ContractError("need at least one scorer")
    classes = {s.descriptor.num_classes for s in scorers}
    if len(classes) != 1:
        raise ContractError(f"scorers disagree on class count: {classes}")
    chunks = chunk(tokenize(note.assembled_text, vocab, note.note_id).ids, chunking)
    columns = []
    for scorer in scorers:
        try:
            columns.append(score_chunks(scorer, chunks))
        except ScorerError as err:
            err.args = (
                f"note {note.note_id}, scorer {scorer.descriptor.scorer_id}: {err}",
            )
            raise
    return PredictionMatrix(
        note_id=note.note_id,
        entries=tuple(zip(*columns)),
    )


def predict_note(
    note: ClinicalNote,
    scorers: Sequence[ChunkScorer],
    chunking: ChunkingConfig,
    spec: FusionSpec,
    vocab: Vocabulary,
) -> NotePrediction:
    """Full pipeline for one note: tokenize, window, score, fuse."""
    return weighted_fuse(score_matrix(note, scorers, chunking, vocab), spec)


def truncation_baseline(
    note: ClinicalNote,
    scorer: ChunkScorer,
    chunking: ChunkingConfig,
    vocab: Vocabulary,
) -> NotePrediction:
    """Score only the first window and discard the rest of the note."""
    chunks = chunk(tokenize(note.assembled_text, vocab, note.note_id).ids, chunking)
    first = score_chunks(scorer, chunks[:1])
    matrix = PredictionMatrix(note_id=note.note_id, entries=((first[0],),))
    prediction = weighted_fuse(matrix, FusionSpec(model_weights=(1.0,)))
    # num_chunks reports the note's true window count, not the one scored
    return NotePrediction(
        note_id=prediction.note_id,
        fused=prediction.fused,
        per_model_aggregates=prediction.per_model_aggregates,
        num_chunks=len(chunks),
        fusion_spec=prediction.fusion_spec,
        per_chunk=prediction.per_chunk,
    )
