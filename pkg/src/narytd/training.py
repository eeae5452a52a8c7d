"""Fixed-architecture embedding training with Adam and early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .blocks import ArchitectureSet
from .data import Dataset, Fact, FilterIndex, build_filter_index
from .embeddings import SegmentedEmbeddings, init_embeddings
from .errors import DataError, NumericError
from .evaluation import evaluate
from .model import AdamState, adam_step, grad_embeddings_mc

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    dimension: int = 64
    segment_count: int = 2
    learning_rate: float = 0.05
    decay_rate: float = 0.995
    batch_size: int = 128
    max_epochs: int = 100
    seed: int = 0
    mc_samples: int = 1
    patience: int = 10
    eval_every: int = 1  # epochs between validation checks; 0 disables

    def __post_init__(self):
        if self.dimension <= 0 or self.segment_count <= 0:
            raise DataError("dimension and segment count must be positive")
        if self.dimension % self.segment_count != 0:
            raise DataError(
                f"dimension {self.dimension} not divisible by segment count {self.segment_count}"
            )
        if self.mc_samples < 1:
            raise DataError("mc_samples must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise DataError("batch_size must be >= 1 and max_epochs >= 0")


@dataclass
class LossReport:
    epoch: int
    mean_loss: float
    facts: int


@dataclass
class TrainResult:
    embeddings: SegmentedEmbeddings
    history: list[LossReport]
    valid_mrr_history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def final_valid_mrr(self) -> float | None:
        return self.valid_mrr_history[-1][1] if self.valid_mrr_history else None


def batch_rng(seed: int) -> np.random.Generator:
    """The mini-batch shuffle stream; kept apart from any sampling streams
    so that architecture draws never perturb the batch order."""
    return np.random.default_rng([seed, 0])


def epoch_batches(
    facts: Sequence[Fact], batch_size: int, rng: np.random.Generator
) -> Iterator[list[Fact]]:
    """One shuffled pass over the facts in batches."""
    order = rng.permutation(len(facts))
    for start in range(0, len(facts), batch_size):
        yield [facts[i] for i in order[start : start + batch_size]]


def check_architecture_covers(architecture: ArchitectureSet, dataset: Dataset) -> None:
    missing = [n for n in dataset.arities() if n not in architecture]
    if missing:
        raise DataError(f"architecture has no assignment for arities {missing}")


def train_fixed(
    architecture: ArchitectureSet,
    dataset: Dataset,
    config: TrainConfig,
    initial_embeddings: SegmentedEmbeddings | None = None,
    filter_index: FilterIndex | None = None,
    tie_policy: str = "optimistic",
) -> TrainResult:
    """Train embeddings under one fixed architecture set.

    Runs shuffled mini-batch epochs with per-epoch multiplicative learning
    rate decay; stops early when validation MRR has not improved for
    `patience` consecutive checks. Returns the final embeddings and the
    per-epoch loss history.
    """
    check_architecture_covers(architecture, dataset)
    if architecture.segment_count != config.segment_count:
        raise DataError("architecture and config segment counts differ")
    vocab = dataset.vocabulary
    if initial_embeddings is not None:
        embeddings = initial_embeddings
    else:
        embeddings = init_embeddings(
            vocab.entity_count,
            vocab.relation_count,
            config.dimension,
            config.segment_count,
            config.seed,
        )
    if dataset.valid and filter_index is None and config.eval_every > 0:
        filter_index = build_filter_index(dataset)
    state = AdamState.for_embeddings(embeddings)
    rng = batch_rng(config.seed)
    history: list[LossReport] = []
    valid_history: list[tuple[int, float]] = []
    best_mrr = -np.inf
    stale = 0
    n_train = len(dataset.train)
    for epoch in range(config.max_epochs):
        lr = config.learning_rate * config.decay_rate**epoch
        epoch_loss = 0.0
        for batch in epoch_batches(dataset.train, config.batch_size, rng):
            grads, loss = grad_embeddings_mc(
                architecture, embeddings, batch, lam=config.mc_samples
            )
            epoch_loss += loss
            embeddings, state = adam_step(embeddings, grads, state, lr)
        mean_loss = epoch_loss / n_train
        if not np.isfinite(mean_loss):
            raise NumericError(f"training loss diverged at epoch {epoch}: {mean_loss}")
        history.append(LossReport(epoch=epoch, mean_loss=mean_loss, facts=n_train))
        if dataset.valid and config.eval_every > 0 and (epoch + 1) % config.eval_every == 0:
            metrics = evaluate(
                embeddings, architecture, dataset, "valid", filter_index, tie_policy
            )
            valid_history.append((epoch, metrics.mrr))
            if metrics.mrr > best_mrr:
                best_mrr = metrics.mrr
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info(
                        "early stop at epoch %d: valid MRR flat for %d checks", epoch, stale
                    )
                    break
    return TrainResult(embeddings, history, valid_history)
