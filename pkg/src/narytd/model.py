"""Batched scoring, multi-class log loss, analytic gradients, Adam.

Positions are 0-based throughout: a fact of arity n has entity positions
0..n-1, and participant q in the packed kernel layout is the relation for
q = 0, entity position q - 1 otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .blocks import ArchitectureSet, CoreAssignment, load_architecture, pack_participants, save_architecture
from .data import Fact, group_by_arity
from .embeddings import SegmentedEmbeddings
from .errors import DataError


def batch_ids(facts: Sequence[Fact]) -> tuple[np.ndarray, np.ndarray]:
    """Id arrays (relations (B,), entities (B, n)) for same-arity facts."""
    rel = np.fromiter((f.relation for f in facts), dtype=np.int64, count=len(facts))
    ent = np.array([f.entities for f in facts], dtype=np.int64)
    return rel, ent


def candidate_scores(
    assignment: CoreAssignment,
    embeddings: SegmentedEmbeddings,
    relation_ids: np.ndarray,
    entity_ids: np.ndarray,
    position: int,
) -> np.ndarray:
    """Scores of every entity substituted at `position`, shape (B, n_e).

    The fixed participants collapse into one context vector per fact, so
    the candidate sweep is a single matrix product against the entity
    rows' active prefix.
    """
    entity_ids = np.asarray(entity_ids)
    n = entity_ids.shape[1]
    if not 0 <= position < n:
        raise DataError(f"position {position} out of range for arity {n}")
    X = pack_participants(embeddings, relation_ids, entity_ids)
    B = X.shape[0]
    used = X.shape[2] * X.shape[3]
    ctx = kernels.context_batch(
        assignment.codes.astype(np.float64), X, position + 1
    ).reshape(B, used)
    return ctx @ embeddings.entity_matrix[:, :used].T


def score_all_candidates(
    assignment: CoreAssignment,
    embeddings: SegmentedEmbeddings,
    fact: Fact,
    position: int,
) -> np.ndarray:
    """Candidate scores for one fact and hole position, shape (n_e,)."""
    if fact.arity != assignment.arity:
        raise DataError(
            f"arity mismatch: assignment is {assignment.arity}, fact is {fact.arity}"
        )
    return candidate_scores(
        assignment,
        embeddings,
        np.array([fact.relation]),
        np.array([fact.entities]),
        position,
    )[0]


def _logsumexp_rows(Z: np.ndarray) -> np.ndarray:
    zmax = Z.max(axis=1)
    return zmax + np.log(np.exp(Z - zmax[:, None]).sum(axis=1))


def multiclass_log_loss(
    assignment: CoreAssignment, embeddings: SegmentedEmbeddings, fact: Fact
) -> float:
    """Sum over entity positions of (logsumexp of candidates - true score)."""
    total = 0.0
    for p in range(fact.arity):
        scores = score_all_candidates(assignment, embeddings, fact, p)
        zmax = scores.max()
        lse = zmax + np.log(np.exp(scores - zmax).sum())
        total += lse - scores[fact.entities[p]]
    return float(total)


@dataclass
class GradientAccumulator:
    """Dense gradients congruent to the embedding matrices."""

    entity: np.ndarray
    relation: np.ndarray

    @classmethod
    def zeros_like(cls, embeddings: SegmentedEmbeddings) -> "GradientAccumulator":
        return cls(
            np.zeros_like(embeddings.entity_matrix),
            np.zeros_like(embeddings.relation_matrix),
        )

    def __iadd__(self, other: "GradientAccumulator") -> "GradientAccumulator":
        self.entity += other.entity
        self.relation += other.relation
        return self

    def scale(self, factor: float) -> "GradientAccumulator":
        self.entity *= factor
        self.relation *= factor
        return self


def _grad_arity_group(
    codes: np.ndarray,
    embeddings: SegmentedEmbeddings,
    relation_ids: np.ndarray,
    entity_ids: np.ndarray,
    grads: GradientAccumulator,
) -> float:
    """Accumulate the loss gradient of one same-arity group; return its loss."""
    B, n = entity_ids.shape
    X = pack_participants(embeddings, relation_ids, entity_ids)
    m, ds = X.shape[2], X.shape[3]
    used = m * ds
    E_used = embeddings.entity_matrix[:, :used]
    ent_grad = grads.entity[:, :used]
    rel_grad = grads.relation[:, :used]
    rows = np.arange(B)
    loss = 0.0
    for p in range(n):
        ctx = kernels.context_batch(codes, X, p + 1).reshape(B, used)
        Z = ctx @ E_used.T
        lse = _logsumexp_rows(Z)
        true_ids = entity_ids[:, p]
        loss += float((lse - Z[rows, true_ids]).sum())
        G = np.exp(Z - lse[:, None])
        G[rows, true_ids] -= 1.0
        # candidates at the hole: every entity row takes its softmax share
        ent_grad += G.T @ ctx
        # remaining slots see the softmax-weighted candidate mixture, which
        # by multilinearity stands in for the whole candidate sweep
        virtual = (G @ E_used).reshape(B, m, ds)
        Xv = X.copy()
        Xv[:, p + 1] = virtual
        for q in range(n + 1):
            if q == p + 1:
                continue
            ctx_q = kernels.context_batch(codes, Xv, q).reshape(B, used)
            if q == 0:
                np.add.at(rel_grad, relation_ids, ctx_q)
            else:
                np.add.at(ent_grad, entity_ids[:, q - 1], ctx_q)
    return loss


def grad_batch(
    architecture: ArchitectureSet,
    embeddings: SegmentedEmbeddings,
    facts: Sequence[Fact],
) -> tuple[GradientAccumulator, float]:
    """Analytic gradient of the summed multi-class log loss over a batch."""
    grads = GradientAccumulator.zeros_like(embeddings)
    loss = 0.0
    for arity, group in sorted(group_by_arity(facts).items()):
        codes = architecture[arity].codes.astype(np.float64)
        rel_ids, ent_ids = batch_ids(group)
        loss += _grad_arity_group(codes, embeddings, rel_ids, ent_ids, grads)
    return grads, loss


def batch_loss(
    architecture: ArchitectureSet,
    embeddings: SegmentedEmbeddings,
    facts: Sequence[Fact],
) -> float:
    """Summed multi-class log loss over a batch (no gradients)."""
    total = 0.0
    rows = None
    for arity, group in sorted(group_by_arity(facts).items()):
        assignment = architecture[arity]
        rel_ids, ent_ids = batch_ids(group)
        rows = np.arange(len(group))
        for p in range(arity):
            Z = candidate_scores(assignment, embeddings, rel_ids, ent_ids, p)
            lse = _logsumexp_rows(Z)
            total += float((lse - Z[rows, ent_ids[:, p]]).sum())
    return total


def resolve_architectures(source, lam: int, rng: np.random.Generator) -> list[ArchitectureSet]:
    """Materialize the lam architecture sets a gradient step averages over."""
    if isinstance(source, ArchitectureSet):
        return [source] * lam
    if isinstance(source, (list, tuple)):
        if len(source) != lam:
            raise ValueError(f"got {len(source)} architectures, expected lam={lam}")
        return list(source)
    if hasattr(source, "sample"):
        return [source.sample(rng) for _ in range(lam)]
    raise TypeError(f"cannot draw architectures from {type(source).__name__}")


def grad_embeddings_mc(
    source,
    embeddings: SegmentedEmbeddings,
    facts: Sequence[Fact],
    lam: int = 1,
    rng: np.random.Generator | None = None,
) -> tuple[GradientAccumulator, float]:
    """Monte-Carlo averaged gradient over lam architecture draws.

    `source` is a fixed ArchitectureSet (used lam times), an explicit list
    of lam sets, or a distribution exposing sample(rng). Returns the mean
    gradient and the mean summed batch loss.
    """
    if lam < 1:
        raise ValueError("lam must be >= 1")
    architectures = resolve_architectures(source, lam, rng or np.random.default_rng())
    total = GradientAccumulator.zeros_like(embeddings)
    loss = 0.0
    for architecture in architectures:
        grads, batch_l = grad_batch(architecture, embeddings, facts)
        total += grads
        loss += batch_l
    total.scale(1.0 / lam)
    return total, loss / lam


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m_entity: np.ndarray
    v_entity: np.ndarray
    m_relation: np.ndarray
    v_relation: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_embeddings(
        cls, embeddings: SegmentedEmbeddings, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> "AdamState":
        return cls(
            np.zeros_like(embeddings.entity_matrix),
            np.zeros_like(embeddings.entity_matrix),
            np.zeros_like(embeddings.relation_matrix),
            np.zeros_like(embeddings.relation_matrix),
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(
    embeddings: SegmentedEmbeddings,
    grads: GradientAccumulator,
    state: AdamState,
    learning_rate: float,
) -> tuple[SegmentedEmbeddings, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for param, grad, m, v in (
        (embeddings.entity_matrix, grads.entity, state.m_entity, state.v_entity),
        (embeddings.relation_matrix, grads.relation, state.m_relation, state.v_relation),
    ):
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param -= learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return embeddings, state


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    directory: str | Path,
    embeddings: SegmentedEmbeddings,
    architecture: ArchitectureSet,
    config: dict | None = None,
    extra_meta: dict | None = None,
) -> Path:
    """Write meta.json plus raw row-major little-endian float32 matrices."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "entities.bin").write_bytes(
        np.ascontiguousarray(embeddings.entity_matrix, dtype="<f4").tobytes()
    )
    (directory / "relations.bin").write_bytes(
        np.ascontiguousarray(embeddings.relation_matrix, dtype="<f4").tobytes()
    )
    save_architecture(directory / "architecture.json", architecture)
    meta = {
        "n_e": embeddings.entity_count,
        "n_r": embeddings.relation_count,
        "dimension": embeddings.dimension,
        "segment_count": embeddings.segment_count,
        "max_arity": architecture.max_arity,
        "architecture_file": "architecture.json",
        "config": config or {},
    }
    meta.update(extra_meta or {})
    (directory / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return directory


def load_checkpoint(directory: str | Path) -> tuple[SegmentedEmbeddings, ArchitectureSet, dict]:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataError(f"checkpoint meta not found: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    n_e, n_r, d = meta["n_e"], meta["n_r"], meta["dimension"]
    ent = np.frombuffer((directory / "entities.bin").read_bytes(), dtype="<f4")
    rel = np.frombuffer((directory / "relations.bin").read_bytes(), dtype="<f4")
    if ent.size != n_e * d or rel.size != n_r * d:
        raise DataError("checkpoint matrix sizes do not match meta.json")
    embeddings = SegmentedEmbeddings(
        ent.reshape(n_e, d).astype(np.float64),
        rel.reshape(n_r, d).astype(np.float64),
        meta["segment_count"],
    )
    architecture = load_architecture(directory / meta["architecture_file"])
    return embeddings, architecture, meta


def round_trip_float32(embeddings: SegmentedEmbeddings) -> SegmentedEmbeddings:
    """Embeddings as they will read back from a float32 checkpoint."""
    return SegmentedEmbeddings(
        embeddings.entity_matrix.astype("<f4").astype(np.float64),
        embeddings.relation_matrix.astype("<f4").astype(np.float64),
        embeddings.segment_count,
    )
