"""Mini-batch training for the linear chunk scorer.

Chunks inherit their note's label. Optimization is gradient descent on
the multinomial cross-entropy with decoupled weight decay, gradient
accumulation, and a linear warmup/decay learning-rate schedule. After
every epoch the model is evaluated note-level (score all chunks of each
validation note, average them, macro-AUROC over notes); training stops
early once that score stops improving, and the best epoch's weights are
what the caller gets back.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .chunker import Chunk, ChunkingConfig, chunk
from .corpus import ClinicalNote
from .errors import DataError, NumericDivergenceError
from .metrics import macro_auroc
from .scoring import (
    LinearScorer,
    ScorerDescriptor,
    ScorerKind,
    TrainerConfig,
    chunks_to_csr,
    softmax_rows,
)
from .seeds import child_seed
from .tokenizer import Vocabulary, tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledChunks:
    """All windows of one note, sharing the note's class label."""

    note_id: str
    chunks: tuple[Chunk, ...]
    label: int


def build_labeled_chunks(
    notes: list[ClinicalNote],
    labels: list[int],
    chunking: ChunkingConfig,
    vocab: Vocabulary,
) -> list[LabeledChunks]:
    """Tokenize and window each note, attaching its label to every chunk."""
    if len(notes) != len(labels):
        raise DataError(f"{len(notes)} notes but {len(labels)} labels")
    return [
        LabeledChunks(
            note_id=note.note_id,
            chunks=tuple(chunk(tokenize(note.assembled_text, vocab).ids, chunking)),
            label=label,
        )
        for note, label in zip(notes, labels)
    ]


def lr_schedule(step: int, peak: float, warmup_steps: int, total_steps: int) -> float:
    """Zero at step 0, linear to ``peak`` at warmup_steps, linear back to
    zero at total_steps. Flat zero beyond the schedule."""
    if step <= 0:
        return 0.0
    if step <= warmup_steps:
        return peak * step / warmup_steps
    if total_steps <= warmup_steps or step >= total_steps:
        return 0.0
    return peak * (total_steps - step) / (total_steps - warmup_steps)


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray | sparse.csr_matrix,
    labels: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch and its analytic gradient.

    Weight decay is decoupled (applied at the optimizer step), so it is
    deliberately absent here; this is the pure data term.
    """
    probs = softmax_rows(np.asarray(features @ weights.T + bias))
    batch = len(labels)
    picked = probs[np.arange(batch), labels]
    loss = float(-np.log(np.clip(picked, 1e-300, None)).mean())
    delta = probs
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch
    grad_w = np.asarray(delta.T @ features)
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


class EarlyStopping:
    """Halt when the monitored value fails to beat the best by ``delta``
    for ``patience`` consecutive updates."""

    def __init__(self, delta: float, patience: int):
        self.delta = delta
        self.patience = patience
        self.best_value = -math.inf
        self.streak = 0

    def update(self, value: float) -> bool:
        if value - self.best_value < self.delta:
            self.streak += 1
        else:
            self.streak = 0
        self.best_value = max(self.best_value, value)
        return self.streak >= self.patience


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    val_auroc: float
    lr: float


@dataclass(frozen=True)
class TrainingLog:
    """What happened during one training run.

    ``seen_note_ids`` records every note the trainer touched, so callers
    can assert the test split never leaked in.
    """

    epochs: tuple[EpochStats, ...]
    best_epoch: int
    best_val_auroc: float
    stopped_early: bool
    total_optimizer_steps: int
    seen_note_ids: frozenset[str] = field(repr=False)


def _note_level_probs(
    weights: np.ndarray,
    bias: np.ndarray,
    features: sparse.csr_matrix,
    note_starts: np.ndarray,
    note_sizes: np.ndarray,
) -> np.ndarray:
    """Score all chunks at once, then mean-pool back to notes."""
    probs = softmax_rows(np.asarray(features @ weights.T + bias))
    return np.add.reduceat(probs, note_starts, axis=0) / note_sizes[:, None]


def train_linear_scorer(
    train: list[LabeledChunks],
    validation: list[LabeledChunks],
    vocab_size: int,
    num_classes: int,
    config: TrainerConfig,
    scorer_id: str = "linear",
) -> tuple[LinearScorer, TrainingLog]:
    """Fit the linear scorer; return it with the best-validation weights.

    Deterministic per config seed: weight init and epoch shuffling each
    use a named substream, so identical inputs reproduce identical
    checkpoints bit for bit.
    """
    if not train:
        raise DataError("training set is empty")
    if not validation:
        raise DataError("validation set is empty")
    flat_chunks = [c for item in train for c in item.chunks]
    flat_labels = np.array(
        [item.label for item in train for _ in item.chunks], dtype=np.int64
    )
    if flat_labels.max(initial=0) >= num_classes:
        raise DataError("label outside class range")
    features = chunks_to_csr(flat_chunks, vocab_size)
    val_chunks = [c for item in validation for c in item.chunks]
    val_features = chunks_to_csr(val_chunks, vocab_size)
    val_sizes = np.array([len(item.chunks) for item in validation])
    val_starts = np.concatenate([[0], np.cumsum(val_sizes)[:-1]])
    val_labels = [item.label for item in validation]

    rng_init = np.random.default_rng(child_seed(config.seed, "init"))
    rng_shuffle = np.random.default_rng(child_seed(config.seed, "shuffle"))
    weights = rng_init.normal(scale=0.01, size=(num_classes, vocab_size))
    bias = np.zeros(num_classes)

    n = len(flat_chunks)
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = batches_per_epoch * config.max_epochs // config.accumulation_steps

    stopper = EarlyStopping(config.early_stop_delta, config.early_stop_patience)
    best = {"auroc": -math.inf, "epoch": 0, "weights": weights.copy(), "bias": bias.copy()}
    epochs: list[EpochStats] = []
    stopped_early = False
    opt_step = 0
    micro_in_window = 0
    acc_w = np.zeros_like(weights)
    acc_b = np.zeros_like(bias)
    current_lr = 0.0

    for epoch in range(1, config.max_epochs + 1):
        order = rng_shuffle.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            loss, grad_w, grad_b = loss_and_grad(
                weights, bias, features[idx], flat_labels[idx]
            )
            if math.isnan(loss):
                raise NumericDivergenceError(
                    f"loss became NaN at optimizer step {opt_step}", step=opt_step
                )
            losses.append(loss)
            acc_w += grad_w
            acc_b += grad_b
            micro_in_window += 1
            if micro_in_window == config.accumulation_steps:
                opt_step += 1
                current_lr = lr_schedule(
                    opt_step, config.learning_rate, config.warmup_steps, total_steps
                )
                weights -= current_lr * (acc_w / config.accumulation_steps)
                weights -= current_lr * config.weight_decay * weights
                bias -= current_lr * (acc_b / config.accumulation_steps)
                acc_w[:] = 0.0
                acc_b[:] = 0.0
                micro_in_window = 0
        note_probs = _note_level_probs(weights, bias, val_features, val_starts, val_sizes)
        val_auroc = macro_auroc(note_probs, val_labels, num_classes).macro_auc
        epochs.append(
            EpochStats(
                epoch=epoch,
                mean_loss=float(np.mean(losses)),
                val_auroc=val_auroc,
                lr=current_lr,
            )
        )
        if val_auroc > best["auroc"]:
            best = {
                "auroc": val_auroc,
                "epoch": epoch,
                "weights": weights.copy(),
                "bias": bias.copy(),
            }
        if stopper.update(val_auroc):
            stopped_early = True
            logger.info("early stop at epoch %d (best %.4f at epoch %d)",
                        epoch, best["auroc"], best["epoch"])
            break

    scorer = LinearScorer(
        descriptor=ScorerDescriptor(
            scorer_id=scorer_id, kind=ScorerKind.LINEAR, num_classes=num_classes
        ),
        weights=best["weights"],
        bias=best["bias"],
        trainer_config=config,
        best_val_auroc=best["auroc"],
    )
    log = TrainingLog(
        epochs=tuple(epochs),
        best_epoch=best["epoch"],
        best_val_auroc=best["auroc"],
        stopped_early=stopped_early,
        total_optimizer_steps=opt_step,
        seen_note_ids=frozenset(
            item.note_id for item in train + validation
        ),
    )
    return scorer, log
