"""Experiment grid: prepare data, train scorers, compare methods.

Four evaluation methods over one test split:

- baseline: first window only, one row per scorer
- ensemble: first window, scorers averaged
- aggregation: all windows averaged, one row per scorer
- ensemble_aggregation: all windows, all scorers fused

A scorer that fails to build or score turns the rows that need it into
error rows; every other row is still computed. Reports from local
scorers are byte-identical across reruns of the same config and seed, so
wall-clock time is kept out of report.json and shown only in the
markdown rendering.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .chunker import Chunk, ChunkingConfig, chunk
from .corpus import (
    ClinicalNote,
    CsvSchema,
    GeneratorConfig,
    TaskKind,
    TaskSpec,
    filter_for_task,
    generate_synthetic_corpus,
    ingest_csv,
    signal_pattern,
    split_dataset,
)
from .errors import (
    ChunkfuseError,
    ConfigError,
    ContractError,
    DataError,
    MetricUndefinedError,
)
from .fusion import FusionSpec
from .metrics import RocReport, format_percent, macro_auroc
from .remote import RemoteScorer
from .scoring import (
    ChunkScorer,
    LinearScorer,
    MockScorer,
    PatternScorer,
    ScorerDescriptor,
    ScorerKind,
    TrainerConfig,
    score_chunks,
)
from .seeds import child_seed
from .tokenizer import Vocabulary, build_vocabulary, tokenize
from .training import build_labeled_chunks, train_linear_scorer

logger = logging.getLogger(__name__)


class Method(Enum):
    BASELINE = "baseline"
    ENSEMBLE = "ensemble"
    AGGREGATION = "aggregation"
    ENSEMBLE_AGGREGATION = "ensemble_aggregation"


METHOD_ORDER = (
    Method.BASELINE,
    Method.ENSEMBLE,
    Method.AGGREGATION,
    Method.ENSEMBLE_AGGREGATION,
)

METHOD_LABELS = {
    Method.BASELINE: "Baseline",
    Method.ENSEMBLE: "Ensemble",
    Method.AGGREGATION: "Aggregation",
    Method.ENSEMBLE_AGGREGATION: "Ensemble + Aggregation",
}


@dataclass(frozen=True)
class SyntheticSource:
    generator: GeneratorConfig


@dataclass(frozen=True)
class CsvSource:
    path: str
    schema: CsvSchema


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec
    data_source: SyntheticSource | CsvSource
    scorers: tuple[ScorerDescriptor, ...]
    methods: tuple[Method, ...]
    output_dir: str
    chunking: ChunkingConfig = ChunkingConfig()
    fusion: FusionSpec | None = None
    trainer: TrainerConfig = TrainerConfig()
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    vocab_size: int = 5000
    seed: int = 0
    parallel_rows: bool = False

    def __post_init__(self) -> None:
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.scorers:
            raise ConfigError("at least one scorer is required")
        ids = [s.scorer_id for s in self.scorers]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate scorer ids: {ids}")
        ensemble_methods = {Method.ENSEMBLE, Method.ENSEMBLE_AGGREGATION}
        if ensemble_methods & set(self.methods) and len(self.scorers) < 2:
            raise ConfigError("ensemble methods require at least 2 scorers")
        if any(s.num_classes != self.task.num_classes for s in self.scorers):
            raise ConfigError("scorer class counts must match the task")
        if self.fusion is None:
            object.__setattr__(
                self,
                "fusion",
                FusionSpec.uniform(
                    len(self.scorers), with_overlap=self.chunking.overlap > 0
                ),
            )
        elif len(self.fusion.model_weights) != len(self.scorers):
            raise ConfigError(
                f"{len(self.fusion.model_weights)} fusion weights for"
                f" {len(self.scorers)} scorers"
            )

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentConfig":
        return _config_from_dict(doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path} is not valid JSON: {err}") from err
        return _config_from_dict(doc)


_TASKS = {
    TaskKind.MORTALITY.value: TaskSpec.mortality,
    TaskKind.LENGTH_OF_STAY.value: TaskSpec.length_of_stay,
}

_TOP_LEVEL_KEYS = {
    "task", "data", "scorers", "methods", "output_dir", "chunking", "fusion",
    "trainer", "split_ratios", "vocab_size", "seed", "parallel_rows",
}


def _build(kind: str, factory, fields: dict):
    try:
        return factory(**fields)
    except TypeError as err:
        raise ConfigError(f"bad {kind} block: {err}") from err


def _config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("task", "data", "scorers", "methods", "output_dir"):
        if key not in doc:
            raise ConfigError(f"config is missing required key {key!r}")
    if doc["task"] not in _TASKS:
        raise ConfigError(f"unknown task {doc['task']!r}; use one of {sorted(_TASKS)}")
    task = _TASKS[doc["task"]]()

    data = dict(doc["data"])
    kind = data.pop("kind", None)
    if kind == "synthetic":
        source: SyntheticSource | CsvSource = SyntheticSource(
            generator=_build("data", GeneratorConfig, data)
        )
    elif kind == "csv":
        try:
            schema_doc = dict(data.pop("schema"))
            path = data.pop("path")
        except KeyError as err:
            raise ConfigError(f"csv data source is missing {err}") from err
        if data:
            raise ConfigError(f"unknown csv source keys: {sorted(data)}")
        source = CsvSource(path=path, schema=_build("schema", CsvSchema, schema_doc))
    else:
        raise ConfigError(f"data.kind must be 'synthetic' or 'csv', got {kind!r}")

    try:
        methods = tuple(Method(m) for m in doc["methods"])
    except ValueError as err:
        raise ConfigError(f"unknown method: {err}") from err

    scorers = []
    for entry in doc["scorers"]:
        entry = dict(entry)
        try:
            kind_name = entry.pop("kind")
            scorer_id = entry.pop("scorer_id")
        except KeyError as err:
            raise ConfigError(f"scorer entry is missing {err}") from err
        try:
            scorer_kind = ScorerKind(kind_name)
        except ValueError as err:
            raise ConfigError(f"unknown scorer kind {kind_name!r}") from err
        metadata = entry.pop("metadata", {})
        if entry:
            raise ConfigError(f"unknown scorer keys: {sorted(entry)}")
        scorers.append(
            ScorerDescriptor(
                scorer_id=scorer_id,
                kind=scorer_kind,
                num_classes=task.num_classes,
                metadata={str(k): str(v) for k, v in metadata.items()},
            )
        )

    fusion = None
    if "fusion" in doc:
        fusion_doc = dict(doc["fusion"])
        if "aggregation" in fusion_doc:
            from .fusion import AggregationMode

            fusion_doc["aggregation"] = AggregationMode(fusion_doc["aggregation"])
        if "model_weights" in fusion_doc:
            fusion_doc["model_weights"] = tuple(fusion_doc["model_weights"])
        fusion = _build("fusion", FusionSpec, fusion_doc)

    return ExperimentConfig(
        task=task,
        data_source=source,
        scorers=tuple(scorers),
        methods=methods,
        output_dir=str(doc["output_dir"]),
        chunking=_build("chunking", ChunkingConfig, doc.get("chunking", {})),
        fusion=fusion,
        trainer=_build("trainer", TrainerConfig, doc.get("trainer", {})),
        split_ratios=tuple(doc.get("split_ratios", (0.7, 0.1, 0.2))),
        vocab_size=int(doc.get("vocab_size", 5000)),
        seed=int(doc.get("seed", 0)),
        parallel_rows=bool(doc.get("parallel_rows", False)),
    )


@dataclass(frozen=True)
class ReportRow:
    method: Method
    scorer_ids: tuple[str, ...]
    with_overlap: bool
    macro_auroc: float | None = None
    roc: RocReport | None = field(default=None, repr=False)
    error: str | None = None
    error_code: int | None = None

    def to_json_dict(self) -> dict:
        return {
            "method": self.method.value,
            "scorers": list(self.scorer_ids),
            "with_overlap": self.with_overlap,
            "macro_auroc": self.macro_auroc,
            "macro_auroc_percent": (
                None if self.macro_auroc is None else format_percent(self.macro_auroc)
            ),
            "per_class_auc": (
                None
                if self.roc is None
                else [None if np.isnan(a) else a for a in self.roc.per_class_auc]
            ),
            "error": self.error,
        }


@dataclass(frozen=True)
class ComparisonReport:
    task: str
    seed: int
    sizes: dict[str, int]
    rows: tuple[ReportRow, ...]
    wall_clock_seconds: float | None = None

    def to_json_dict(self) -> dict:
        # wall clock deliberately excluded: report.json must be
        # byte-identical across reruns with the same config and seed
        return {
            "task": self.task,
            "seed": self.seed,
            "sizes": self.sizes,
            "rows": [row.to_json_dict() for row in self.rows],
        }

    def worst_error_code(self) -> int:
        return max((r.error_code or 0 for r in self.rows), default=0)


class ReportFormat(Enum):
    JSON = "json"
    CSV = "csv"
    MARKDOWN = "markdown"


def emit_report(
    report: ComparisonReport, fmt: ReportFormat, path: str | Path
) -> Path:
    """Render the comparison to one file; returns the path written."""
    path = Path(path)
    if fmt is ReportFormat.JSON:
        text = json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
    elif fmt is ReportFormat.CSV:
        lines = ["method,scorers,with_overlap,macro_auroc_percent,error"]
        for row in report.rows:
            value = "" if row.macro_auroc is None else format_percent(row.macro_auroc)
            error = (row.error or "").replace(",", ";")
            lines.append(
                f"{row.method.value},{'+'.join(row.scorer_ids)},"
                f"{str(row.with_overlap).lower()},{value},{error}"
            )
        text = "\n".join(lines) + "\n"
    else:
        lines = [
            "| Category | Architecture | Overlap | Macro AUROC (%) |",
            "| --- | --- | --- | --- |",
        ]
        for row in report.rows:
            value = (
                f"error: {row.error}"
                if row.macro_auroc is None
                else format_percent(row.macro_auroc)
            )
            overlap = "yes" if row.with_overlap else "no"
            lines.append(
                f"| {METHOD_LABELS[row.method]} | {' + '.join(row.scorer_ids)}"
                f" | {overlap} | {value} |"
            )
        lines.append("")
        lines.append(
            f"task: {report.task}, seed: {report.seed}, sizes: {report.sizes}"
        )
        if report.wall_clock_seconds is not None:
            lines.append(f"wall clock: {report.wall_clock_seconds:.1f} s")
        text = "\n".join(lines) + "\n"
    try:
        path.write_text(text)
    except OSError as err:
        raise DataError(f"cannot write report to {path}: {err}") from err
    return path


def _load_notes(config: ExperimentConfig) -> list[ClinicalNote]:
    if isinstance(config.data_source, SyntheticSource):
        return generate_synthetic_corpus(
            config.data_source.generator, child_seed(config.seed, "data")
        )
    result = ingest_csv(config.data_source.path, config.data_source.schema)
    if result.skipped_rows:
        logger.warning("ingest skipped %d rows with bad labels", result.skipped_rows)
    return result.notes


def _auto_pattern_ids(config: ExperimentConfig, vocab: Vocabulary) -> tuple[int, ...]:
    if not isinstance(config.data_source, SyntheticSource):
        raise ConfigError("pattern 'auto' needs a synthetic data source")
    tokens = signal_pattern(config.data_source.generator.signal_length)
    return tuple(vocab.id_for(t) for t in tokens)


def _build_scorer(
    descriptor: ScorerDescriptor,
    config: ExperimentConfig,
    vocab: Vocabulary,
    train_items,
    val_items,
    test_ids: frozenset[str],
    output_dir: Path,
) -> ChunkScorer:
    if descriptor.kind is ScorerKind.MOCK:
        probs = descriptor.metadata.get("probs")
        if probs is None:
            raise ConfigError(
                f"mock scorer {descriptor.scorer_id} needs metadata.probs"
            )
        return MockScorer.constant(
            descriptor.scorer_id, [float(p) for p in probs.split(",")]
        )
    if descriptor.kind is ScorerKind.PATTERN:
        spec = descriptor.metadata.get("pattern", "auto")
        if spec == "auto":
            ids = _auto_pattern_ids(config, vocab)
        else:
            ids = tuple(vocab.id_for(tok) for tok in spec.split())
        return PatternScorer.for_pattern(descriptor.scorer_id, ids)
    if descriptor.kind is ScorerKind.REMOTE:
        endpoint = descriptor.metadata.get("endpoint")
        if not endpoint:
            raise ConfigError(
                f"remote scorer {descriptor.scorer_id} needs metadata.endpoint"
            )
        return RemoteScorer.connect(
            endpoint,
            config.task.task_kind.value,
            config.task.num_classes,
            scorer_id=descriptor.scorer_id,
        )
    checkpoint = descriptor.metadata.get("checkpoint")
    if checkpoint:
        scorer = LinearScorer.load(checkpoint)
        if scorer.descriptor.num_classes != config.task.num_classes:
            raise ConfigError(f"checkpoint {checkpoint} has the wrong class count")
        return scorer
    trainer = dataclasses.replace(
        config.trainer, seed=child_seed(config.seed, f"train:{descriptor.scorer_id}")
    )
    scorer, log = train_linear_scorer(
        train_items,
        val_items,
        vocab_size=len(vocab),
        num_classes=config.task.num_classes,
        config=trainer,
        scorer_id=descriptor.scorer_id,
    )
    leaked = log.seen_note_ids & test_ids
    if leaked:
        raise ContractError(f"trainer saw test notes: {sorted(leaked)[:5]}")
    scorer.save(output_dir / f"scorer_{descriptor.scorer_id}.ckpt.json")
    logger.info(
        "trained %s: best val AUROC %.4f at epoch %d (%d epochs run)",
        descriptor.scorer_id, log.best_val_auroc, log.best_epoch, len(log.epochs),
    )
    return scorer


def _row_plan(config: ExperimentConfig) -> list[tuple[Method, tuple[str, ...]]]:
    all_ids = tuple(s.scorer_id for s in config.scorers)
    plan = []
    for method in METHOD_ORDER:
        if method not in config.methods:
            continue
        if method in (Method.BASELINE, Method.AGGREGATION):
            plan.extend((method, (sid,)) for sid in all_ids)
        else:
            plan.append((method, all_ids))
    return plan


def _note_probs(
    method: Method,
    scorer_ids: Sequence[str],
    columns: dict[str, list[np.ndarray]],
    weights: dict[str, float],
) -> list[np.ndarray]:
    """Reduce cached per-chunk scores to one vector per note."""
    stacked = []
    num_notes = len(next(iter(columns.values())))
    for i in range(num_notes):
        per_model = np.stack([columns[sid][i] for sid in scorer_ids])  # (p, k, c)
        if method is Method.BASELINE:
            stacked.append(per_model[0, 0])
        elif method is Method.ENSEMBLE:
            stacked.append(per_model[:, 0].mean(axis=0))
        elif method is Method.AGGREGATION:
            stacked.append(per_model[0].mean(axis=0))
        else:
            w = np.array([weights[sid] for sid in scorer_ids])
            w = w / w.sum()
            combined = np.einsum("pkc,p->kc", per_model, w)
            stacked.append(combined.mean(axis=0))
    return stacked


@dataclass
class PreparedData:
    """Everything the grid needs after ingestion, splitting, and vocab."""

    vocab: Vocabulary
    sizes: dict[str, int]
    test_ids: frozenset[str]
    test_notes: list[ClinicalNote]
    test_labels: list[int]
    train_items: list
    val_items: list


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Load notes, split them, and build vocab and chunks from train only."""
    notes = _load_notes(config)
    kept, labels = filter_for_task(notes, config.task)
    if not kept:
        raise DataError("no notes carry a label for the requested task")
    label_by_id = {n.note_id: lab for n, lab in zip(kept, labels)}
    note_by_id = {n.note_id: n for n in kept}
    split = split_dataset(kept, config.split_ratios, child_seed(config.seed, "split"))

    train_notes = [note_by_id[i] for i in split.train]
    val_notes = [note_by_id[i] for i in split.validation]
    vocab = build_vocabulary(
        [n.assembled_text for n in train_notes], config.vocab_size
    )
    needs_training = any(
        s.kind is ScorerKind.LINEAR and not s.metadata.get("checkpoint")
        for s in config.scorers
    )
    train_items = val_items = []
    if needs_training:
        train_items = build_labeled_chunks(
            train_notes, [label_by_id[i] for i in split.train], config.chunking, vocab
        )
        val_items = build_labeled_chunks(
            val_notes, [label_by_id[i] for i in split.validation],
            config.chunking, vocab,
        )
    return PreparedData(
        vocab=vocab,
        sizes={
            "train": len(split.train),
            "validation": len(split.validation),
            "test": len(split.test),
        },
        test_ids=frozenset(split.test),
        test_notes=[note_by_id[i] for i in split.test],
        test_labels=[label_by_id[i] for i in split.test],
        train_items=train_items,
        val_items=val_items,
    )


def build_scorers(
    config: ExperimentConfig, prepared: PreparedData
) -> tuple[dict[str, ChunkScorer], dict[str, ChunkfuseError]]:
    """Construct every configured scorer; failures are collected, not raised."""
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    scorers: dict[str, ChunkScorer] = {}
    failures: dict[str, ChunkfuseError] = {}
    for descriptor in config.scorers:
        try:
            scorers[descriptor.scorer_id] = _build_scorer(
                descriptor, config, prepared.vocab, prepared.train_items,
                prepared.val_items, prepared.test_ids, output_dir,
            )
        except ChunkfuseError as err:
            logger.error("scorer %s failed to build: %s", descriptor.scorer_id, err)
            failures[descriptor.scorer_id] = err
    return scorers, failures


def run_experiment(config: ExperimentConfig) -> ComparisonReport:
    """Execute the full grid and write report/ROC artifacts to output_dir."""
    started = time.perf_counter()
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    prepared = prepare_data(config)
    test_notes = prepared.test_notes
    test_labels = prepared.test_labels
    scorers, failures = build_scorers(config, prepared)

    # Chunk each test note once, then score per scorer in one flat batch.
    chunk_lists: list[list[Chunk]] = [
        chunk(
            tokenize(n.assembled_text, prepared.vocab, n.note_id).ids,
            config.chunking,
        )
        for n in test_notes
    ]
    flat = [c for chunks in chunk_lists for c in chunks]
    offsets = np.cumsum([0] + [len(c) for c in chunk_lists])
    columns: dict[str, list[np.ndarray]] = {}
    for scorer_id, scorer in list(scorers.items()):
        try:
            vectors = score_chunks(scorer, flat)
        except ChunkfuseError as err:
            logger.error("scorer %s failed to score: %s", scorer_id, err)
            failures[scorer_id] = err
            continue
        arr = np.array([v.probs for v in vectors])
        columns[scorer_id] = [
            arr[offsets[i] : offsets[i + 1]] for i in range(len(test_notes))
        ]

    weights = {
        s.scorer_id: w for s, w in zip(config.scorers, config.fusion.model_weights)
    }
    with_overlap = config.chunking.overlap > 0

    def evaluate_row(spec: tuple[Method, tuple[str, ...]]) -> ReportRow:
        method, ids = spec
        broken = [i for i in ids if i in failures]
        if broken:
            err = failures[broken[0]]
            return ReportRow(
                method=method, scorer_ids=ids, with_overlap=with_overlap,
                error=f"scorer {broken[0]}: {err}", error_code=err.exit_code,
            )
        probs = _note_probs(method, ids, columns, weights)
        try:
            roc = macro_auroc(probs, test_labels, config.task.num_classes)
        except MetricUndefinedError as err:
            return ReportRow(
                method=method, scorer_ids=ids, with_overlap=with_overlap,
                error=str(err), error_code=err.exit_code,
            )
        return ReportRow(
            method=method, scorer_ids=ids, with_overlap=with_overlap,
            macro_auroc=roc.macro_auc, roc=roc,
        )

    plan = _row_plan(config)
    if config.parallel_rows and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=min(4, len(plan))) as pool:
            rows = tuple(pool.map(evaluate_row, plan))
    else:
        rows = tuple(evaluate_row(spec) for spec in plan)

    report = ComparisonReport(
        task=config.task.task_kind.value,
        seed=config.seed,
        sizes=prepared.sizes,
        rows=rows,
        wall_clock_seconds=time.perf_counter() - started,
    )
    emit_report(report, ReportFormat.JSON, output_dir / "report.json")
    emit_report(report, ReportFormat.MARKDOWN, output_dir / "report.md")
    final = next((r for r in reversed(rows) if r.roc is not None), None)
    if final is not None:
        for class_index in range(config.task.num_classes):
            if class_index in final.roc.roc_points:
                final.roc.write_roc_csv(
                    class_index, output_dir / f"roc_class_{class_index}.csv"
                )
    return report
