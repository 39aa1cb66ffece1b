"""Note data model, CSV ingestion, dataset splitting, synthetic corpora.

A note is eight ordered text sections plus optional labels. The assembled
text is the fixed-order concatenation of the non-empty sections with a
single space joiner. The synthetic generator plants a signal token
pattern into positive documents so detection quality is measurable
against a known ground truth.
"""

from __future__ import annotations

import csv
import itertools
import logging
import random
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, ContractError, DataError, InvalidLabelError, SchemaError

logger = logging.getLogger(__name__)

# Fixed assembly order: chief complaint, present illness, medical history,
# admission medications, allergies, physical exam, family history, social
# history. Assembly and ingestion both key off this tuple.
SECTION_ORDER = ("CC", "PI", "MH", "AM", "AL", "PE", "FH", "SH")


class TaskKind(Enum):
    MORTALITY = "mortality"
    LENGTH_OF_STAY = "length_of_stay"


@dataclass(frozen=True)
class TaskSpec:
    """Classification target: binary outcome or four stay-length bins."""

    task_kind: TaskKind
    num_classes: int
    los_bin_edges: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        expected = 2 if self.task_kind is TaskKind.MORTALITY else 4
        if self.num_classes != expected:
            raise ContractError(
                f"{self.task_kind.value} requires {expected} classes,"
                f" got {self.num_classes}"
            )
        if any(a >= b for a, b in zip(self.los_bin_edges, self.los_bin_edges[1:])):
            raise ContractError("los_bin_edges must be strictly increasing")

    @classmethod
    def mortality(cls) -> "TaskSpec":
        return cls(task_kind=TaskKind.MORTALITY, num_classes=2)

    @classmethod
    def length_of_stay(cls) -> "TaskSpec":
        # Upper edges are inclusive: <=3, (3,7], (7,14], >14 days.
        return cls(
            task_kind=TaskKind.LENGTH_OF_STAY,
            num_classes=4,
            los_bin_edges=(3.0, 7.0, 14.0),
        )


def assemble_note(sections: dict[str, str]) -> str:
    """Concatenate the eight sections in fixed order, single-space joined,
    with empty sections contributing nothing."""
    missing = [k for k in SECTION_ORDER if k not in sections]
    if missing:
        raise ContractError(f"section map missing kinds: {missing}")
    parts = (sections[k].strip() for k in SECTION_ORDER)
    return " ".join(p for p in parts if p)


@dataclass(frozen=True)
class ClinicalNote:
    """One admission note. ``assembled_text`` is derived and kept coherent
    with ``sections``; construction recomputes it when omitted."""

    note_id: str
    sections: dict[str, str]
    assembled_text: str = ""
    mortality_label: int | None = None  # 0 = death, 1 = living
    los_days: float | None = None

    def __post_init__(self) -> None:
        expected = assemble_note(self.sections)
        if not self.assembled_text:
            object.__setattr__(self, "assembled_text", expected)
        elif self.assembled_text != expected:
            raise ContractError(f"note {self.note_id}: assembled_text out of sync")
        if self.mortality_label is not None and self.mortality_label not in (0, 1):
            raise InvalidLabelError(
                f"note {self.note_id}: mortality label must be 0 or 1"
            )
        if self.los_days is not None and self.los_days < 0:
            raise InvalidLabelError(f"note {self.note_id}: negative los_days")


def derive_los_class(los_days: float, spec: TaskSpec) -> int:
    """Bin a stay length into a class index, upper edges inclusive."""
    if spec.task_kind is not TaskKind.LENGTH_OF_STAY:
        raise ContractError("derive_los_class needs a length-of-stay TaskSpec")
    if los_days < 0:
        raise InvalidLabelError(f"negative los_days: {los_days}")
    return bisect_left(spec.los_bin_edges, los_days)


def filter_for_task(
    notes: Sequence[ClinicalNote], spec: TaskSpec
) -> tuple[list[ClinicalNote], list[int]]:
    """Keep only notes labeled for the task; return them with class indices.

    Notes lacking the relevant label are excluded rather than treated as
    errors, so one ingested corpus can serve both tasks.
    """
    kept: list[ClinicalNote] = []
    labels: list[int] = []
    for note in notes:
        if spec.task_kind is TaskKind.MORTALITY:
            if note.mortality_label is None:
                continue
            kept.append(note)
            labels.append(note.mortality_label)
        else:
            if note.los_days is None:
                continue
            kept.append(note)
            labels.append(derive_los_class(note.los_days, spec))
    return kept, labels


@dataclass(frozen=True)
class CsvSchema:
    """Maps note fields to CSV column names."""

    id_column: str
    section_columns: dict[str, str]
    mortality_column: str | None = None
    los_column: str | None = None

    def __post_init__(self) -> None:
        missing = [k for k in SECTION_ORDER if k not in self.section_columns]
        if missing:
            raise SchemaError(f"schema missing section kinds: {missing}")


@dataclass(frozen=True)
class IngestResult:
    notes: list[ClinicalNote]
    skipped_rows: int
    missing_columns: tuple[str, ...]


def _parse_mortality(raw: str) -> int | None:
    text = raw.strip()
    if not text:
        return None
    value = int(text)  # ValueError propagates to the row skipper
    if value not in (0, 1):
        raise ValueError(f"mortality label out of range: {value}")
    return value


def _parse_los(raw: str) -> float | None:
    text = raw.strip()
    if not text:
        return None
    value = float(text)
    if value < 0:
        raise ValueError(f"negative los_days: {value}")
    return value


def ingest_csv(path: str | Path, schema: CsvSchema) -> IngestResult:
    """Read one note per CSV row.

    Section columns absent from the header are treated as empty (warned
    once); rows whose label values are present but unparseable are
    skipped and counted instead of failing the whole file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        if schema.id_column not in header:
            raise SchemaError(f"{path}: id column {schema.id_column!r} not in header")
        missing = tuple(
            col
            for col in (schema.section_columns[k] for k in SECTION_ORDER)
            if col not in header
        )
        if missing:
            logger.warning("%s: section columns absent, treated as empty: %s",
                           path, ", ".join(missing))
        notes: list[ClinicalNote] = []
        skipped = 0
        for row in reader:
            try:
                mortality = (
                    _parse_mortality(row[schema.mortality_column])
                    if schema.mortality_column and schema.mortality_column in header
                    else None
                )
                los = (
                    _parse_los(row[schema.los_column])
                    if schema.los_column and schema.los_column in header
                    else None
                )
            except ValueError:
                skipped += 1
                continue
            sections = {
                kind: row.get(schema.section_columns[kind]) or ""
                for kind in SECTION_ORDER
            }
            notes.append(
                ClinicalNote(
                    note_id=row[schema.id_column],
                    sections=sections,
                    mortality_label=mortality,
                    los_days=los,
                )
            )
    return IngestResult(notes=notes, skipped_rows=skipped, missing_columns=missing)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    ratios: tuple[float, float, float]

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.validation), len(self.test))


def split_dataset(
    notes: Sequence, ratios: tuple[float, float, float], seed: int
) -> DatasetSplit:
    """Shuffle and partition into train/validation/test.

    Sizes follow largest-remainder apportionment, so each realized size
    is within one note of its exact proportional share. Accepts notes or
    bare id strings.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be non-negative, got {ratios}")
    if not notes:
        raise ContractError("cannot split an empty corpus")
    ids = [getattr(n, "note_id", n) for n in notes]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate note ids in corpus")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n = len(ids)
    exact = [r * n for r in ratios]
    counts = [int(e) for e in exact]
    # Hand leftover notes to the largest fractional remainders, earlier
    # splits winning ties, so the result is deterministic.
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    bounds = list(itertools.accumulate([0] + counts))
    return DatasetSplit(
        train=tuple(ids[bounds[0] : bounds[1]]),
        validation=tuple(ids[bounds[1] : bounds[2]]),
        test=tuple(ids[bounds[2] : bounds[3]]),
        ratios=tuple(ratios),
    )


# ---------------------------------------------------------------------------
# Synthetic corpus generation


def _filler_vocabulary(size: int) -> list[str]:
    """Pseudo-words from consonant-vowel syllables. Pure CV strings, so
    they can never collide with the digit-bearing signal tokens."""
    consonants = "bdfgklmnprstvz"
    vowels = "aeiou"
    syllables = [c + v for c in consonants for v in vowels]
    words = []
    for a, b in itertools.product(syllables, repeat=2):
        words.append(a + b)
        if len(words) >= size:
            return words
    raise ConfigError(f"filler vocabulary size {size} exceeds syllable space")


def signal_pattern(length: int) -> tuple[str, ...]:
    """The planted pattern: ``sig0 sig1 ...``. Disjoint from filler words."""
    return tuple(f"sig{i}" for i in range(length))


def find_pattern(tokens: Sequence, pattern: Sequence) -> list[int]:
    """All start offsets where ``pattern`` occurs contiguously in ``tokens``."""
    if not pattern:
        raise ContractError("pattern must be non-empty")
    hits = []
    limit = len(tokens) - len(pattern)
    for i in range(limit + 1):
        if all(tokens[i + j] == pattern[j] for j in range(len(pattern))):
            hits.append(i)
    return hits


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic corpus shape.

    ``placement`` is "uniform" (offset uniform over the document) or
    "boundary" (with probability ``straddle_prob`` the pattern straddles a
    multiple of ``boundary_period``, otherwise it avoids all of them).
    """

    num_docs: int
    min_tokens: int = 1500
    max_tokens: int = 3000
    signal_length: int = 12
    positive_fraction: float = 0.5
    placement: str = "uniform"
    boundary_period: int = 510
    straddle_prob: float = 0.5
    filler_vocab_size: int = 400

    def __post_init__(self) -> None:
        if self.num_docs < 1:
            raise ConfigError("num_docs must be positive")
        if not 0 < self.min_tokens <= self.max_tokens:
            raise ConfigError("need 0 < min_tokens <= max_tokens")
        if self.signal_length < 1:
            raise ConfigError("signal_length must be positive")
        if self.min_tokens < self.signal_length:
            raise ConfigError(
                f"documents of {self.min_tokens} tokens cannot hold a"
                f" {self.signal_length}-token signal"
            )
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError("positive_fraction must be in [0, 1]")
        if self.placement not in ("uniform", "boundary"):
            raise ConfigError(f"unknown placement mode: {self.placement!r}")
        if self.placement == "boundary":
            if not 0.0 <= self.straddle_prob <= 1.0:
                raise ConfigError("straddle_prob must be in [0, 1]")
            if self.min_tokens <= self.boundary_period:
                raise ConfigError(
                    "boundary placement needs min_tokens > boundary_period"
                )
            if self.signal_length >= self.boundary_period:
                raise ConfigError("signal must be shorter than boundary_period")


def _straddles(offset: int, length: int, period: int) -> bool:
    first_boundary = (offset // period + 1) * period
    return first_boundary < offset + length


def _choose_offset(rng: random.Random, m: int, config: GeneratorConfig) -> int:
    length = config.signal_length
    if config.placement == "uniform":
        return rng.randint(0, m - length)
    if rng.random() < config.straddle_prob:
        boundaries = range(config.boundary_period, m, config.boundary_period)
        b = rng.choice(list(boundaries))
        low = max(0, b - length + 1)
        high = min(b - 1, m - length)
        return rng.randint(low, high)
    for _ in range(1000):
        offset = rng.randint(0, m - length)
        if not _straddles(offset, length, config.boundary_period):
            return offset
    raise ContractError("could not place signal off-boundary after 1000 tries")


def _into_sections(tokens: list[str]) -> dict[str, str]:
    """Spread tokens over the eight sections in contiguous runs. The
    single-space assembly joiner keeps the overall token sequence intact."""
    bounds = [round(i * len(tokens) / 8) for i in range(9)]
    return {
        kind: " ".join(tokens[bounds[i] : bounds[i + 1]])
        for i, kind in enumerate(SECTION_ORDER)
    }


def generate_synthetic_corpus(
    config: GeneratorConfig, seed: int
) -> list[ClinicalNote]:
    """Build a labeled corpus with a planted signal.

    Positive documents contain the signal pattern exactly once (spliced
    over filler, so length is unchanged); negatives never contain it
    because signal tokens are disjoint from the filler vocabulary. The
    positive count is exact: round(num_docs * positive_fraction).
    """
    rng = random.Random(seed)
    filler = _filler_vocabulary(config.filler_vocab_size)
    pattern = list(signal_pattern(config.signal_length))
    num_pos = int(config.num_docs * config.positive_fraction + 0.5)
    labels = [1] * num_pos + [0] * (config.num_docs - num_pos)
    rng.shuffle(labels)
    notes = []
    for i, label in enumerate(labels):
        m = rng.randint(config.min_tokens, config.max_tokens)
        tokens = rng.choices(filler, k=m)
        if label == 1:
            offset = _choose_offset(rng, m, config)
            tokens[offset : offset + config.signal_length] = pattern
        notes.append(
            ClinicalNote(
                note_id=f"syn-{i:05d}",
                sections=_into_sections(tokens),
                mortality_label=label,
            )
        )
    return notes
