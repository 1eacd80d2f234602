"""Optimizer-state memory accounting for staged decoder training.

Everything here is exact integer arithmetic over parameter counts.  The cost
model charges bytes per parameter slot, assuming fp16-style weights with an
Adam-style optimizer kept in 32-bit:

    trainable parameter: 2 (weight) + 2 (grad) + 12 (optimizer moments) = 16 B
    frozen parameter:    2 (weight)                                     =  2 B

A decoder layer with hidden size d, LLaMA-style (4 attention d x d matrices,
gate/up/down feed-forward at width 8d/3, two norm gain vectors) carries
12 d^2 + 2 d parameters.  A rank-r adapter pair on every matrix of such a
layer adds 19 r d parameters.

During stage i of a grown schedule, n_i freshly added layers train at the
full 16 B/param while the N_{i-1} previously trained layers sit frozen at
2 B/param with trainable adapters on top:

    bytes(i) = 16 n_i P + 2 N_{i-1} P + 16 N_{i-1} E

with P = 12 d^2 + 2 d and E = 19 r d.  Embeddings, when modelled at all, are
a constant 16 B/param add-on in every stage; it shifts all stages equally and
can never change which stage is the peak or which plan minimizes it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

TRAINABLE_BYTES = 16  # weight + grad + two optimizer moments
FROZEN_BYTES = 2      # weight only


def default_ffn_dim(hidden_dim: int) -> int:
    """Feed-forward width used by the layer formula: round(8 d / 3).

    The fractional part of 8d/3 is always 0, 1/3 or 2/3, so rounding is
    unambiguous; for d divisible by 3 the result is exactly 8d/3.
    """
    return round(8 * hidden_dim / 3)


@dataclass(frozen=True)
class ModelShape:
    """Static shape info that the byte and FLOPs formulas range over."""

    hidden_dim: int
    layer_count: int
    vocab_size: int = 256
    adapter_rank: int = 0
    ffn_dim: int | None = None

    def __post_init__(self) -> None:
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.layer_count < 1:
            raise ValueError(f"layer_count must be >= 1, got {self.layer_count}")
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.adapter_rank < 0:
            raise ValueError(f"adapter_rank must be >= 0, got {self.adapter_rank}")
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", default_ffn_dim(self.hidden_dim))
        if self.ffn_dim < 1:
            raise ValueError(f"ffn_dim must be >= 1, got {self.ffn_dim}")


def layer_params(hidden_dim: int) -> int:
    """Parameters in one decoder layer: 12 d^2 + 2 d.

    4 attention projections (d x d) + three feed-forward matrices at width
    8d/3 (8 d^2 total) + two norm gain vectors (2 d).
    """
    if hidden_dim < 1:
        raise ValueError(f"hidden_dim must be >= 1, got {hidden_dim}")
    return 12 * hidden_dim * hidden_dim + 2 * hidden_dim


def adapter_params(hidden_dim: int, rank: int) -> int:
    """Adapter parameters for one fully adapted layer: 19 r d.

    Each of the 7 matrices gets a rank-r factor pair sized (out, r) and
    (r, in); with ffn width 8d/3 the per-layer total collapses to 19 r d.
    """
    if hidden_dim < 1:
        raise ValueError(f"hidden_dim must be >= 1, got {hidden_dim}")
    if rank < 0:
        raise ValueError(f"rank must be >= 0, got {rank}")
    return 19 * rank * hidden_dim


def embedding_params(vocab_size: int, hidden_dim: int, tied: bool = False) -> int:
    """Parameters in the embedding class: V*d in, V*d out (unless tied), final gain."""
    table = vocab_size * hidden_dim
    return (table if tied else 2 * table) + hidden_dim


def vanilla_state_bytes(layer_count: int, hidden_dim: int, embedding_params: int = 0) -> int:
    """Bytes to train all layers at once: 16 B/param across the board."""
    if layer_count < 1:
        raise ValueError(f"layer_count must be >= 1, got {layer_count}")
    return TRAINABLE_BYTES * (layer_count * layer_params(hidden_dim) + embedding_params)


def _as_increments(plan) -> tuple[int, ...]:
    """Accept a StagePlan-like object (has .increments) or a plain sequence."""
    inc = tuple(getattr(plan, "increments", plan))
    if not inc:
        raise ValueError("plan must have at least one stage")
    for n in inc:
        if n < 1:
            raise ValueError(f"every stage must add at least one layer, got {inc}")
    return inc


@dataclass(frozen=True)
class StageMemory:
    """Byte breakdown for one stage; total is the sum of the parts."""

    stage: int  # 1-based
    new_layers: int
    prior_layers: int
    new_layer_state_bytes: int
    frozen_param_bytes: int
    adapter_state_bytes: int
    embedding_state_bytes: int = 0

    @property
    def total_bytes(self) -> int:
        return (self.new_layer_state_bytes + self.frozen_param_bytes
                + self.adapter_state_bytes + self.embedding_state_bytes)


def stage_state_bytes(plan, stage: int, shape: ModelShape,
                      embedding_params: int = 0) -> StageMemory:
    """Optimizer-state bytes while stage `stage` (1-based) of `plan` trains.

    New layers cost 16 B/param, previously grown layers 2 B/param frozen plus
    16 B/param for their adapters.  With no prior layers (stage 1) this
    reduces to vanilla_state_bytes over the stage's own layers.
    """
    inc = _as_increments(plan)
    if not 1 <= stage <= len(inc):
        raise IndexError(f"stage {stage} out of range 1..{len(inc)}")
    p = layer_params(shape.hidden_dim)
    e = adapter_params(shape.hidden_dim, shape.adapter_rank)
    n_new = inc[stage - 1]
    n_prior = sum(inc[:stage - 1])
    return StageMemory(
        stage=stage,
        new_layers=n_new,
        prior_layers=n_prior,
        new_layer_state_bytes=TRAINABLE_BYTES * n_new * p,
        frozen_param_bytes=FROZEN_BYTES * n_prior * p,
        adapter_state_bytes=TRAINABLE_BYTES * n_prior * e,
        embedding_state_bytes=TRAINABLE_BYTES * embedding_params,
    )


@dataclass(frozen=True)
class MemoryEstimate:
    """Per-stage byte totals for a whole plan, plus the peak."""

    stages: tuple[StageMemory, ...]

    @property
    def per_stage_bytes(self) -> tuple[int, ...]:
        return tuple(s.total_bytes for s in self.stages)

    @property
    def peak_bytes(self) -> int:
        return max(self.per_stage_bytes)

    @property
    def peak_stage(self) -> int:
        """1-based index of the first stage attaining the peak."""
        per = self.per_stage_bytes
        return per.index(max(per)) + 1


def plan_peak_bytes(plan, shape: ModelShape, embedding_params: int = 0) -> MemoryEstimate:
    """Evaluate stage_state_bytes for every stage of `plan`."""
    inc = _as_increments(plan)
    return MemoryEstimate(tuple(
        stage_state_bytes(inc, i, shape, embedding_params)
        for i in range(1, len(inc) + 1)
    ))


def gigabytes(num_bytes: int) -> float:
    """Decimal gigabytes, the unit used for human-facing reports."""
    return num_bytes / 1e9


def format_gb(num_bytes: int) -> str:
    return f"{gigabytes(num_bytes):.3f} GB"
