"""Stage planning: split a layer budget so the worst stage needs the least memory.

Given a target depth L and a stage count K, choose increments n_1..n_K
(each >= 1, summing to L) minimizing the maximum over stages of

    bytes(i) = 16 n_i P + 2 N_{i-1} P + 16 N_{i-1} E,   N_i = n_1 + .. + n_i

(see stagegrow.memory).  Writing c1 = 16 P and c2 = 2 P + 16 E this is
c1 n_i + c2 N_{i-1}: strictly increasing in both arguments, which makes a
small min-max dynamic program over (stage, cumulative layers) exact.

Two solvers:

    solve_exact    dynamic program, provably optimal, O(K L^2) integer ops
    solve_rounded  closed-form equal-memory relaxation rounded to integers

The relaxation sets all stage byte totals equal, giving a geometric layer
profile n_{i+1} = q n_i with ratio q = (14 P - 16 E) / 16 P and

    n_1 = L (1 - q) / (1 - q^K).

Also here: training-compute estimates.  A full forward+backward pass costs
about 6 FLOPs per parameter per token; a frozen parameter skips the backward
weight work and costs about 2.  Counts are non-embedding throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterable, Sequence

from .memory import ModelShape, adapter_params, layer_params

FLOPS_PER_TRAINABLE_PARAM_TOKEN = 6
FLOPS_PER_FROZEN_PARAM_TOKEN = 2


class PlanInfeasibleError(ValueError):
    """No valid plan exists for the requested layer/stage counts."""


class InstanceTooLargeError(ValueError):
    """Brute-force enumeration would exceed its composition limit."""


class BudgetError(ValueError):
    """A compute budget cannot cover even one step per stage."""


@dataclass(frozen=True)
class StagePlan:
    """Layer increments per stage; stage i trains increments[i-1] new layers."""

    increments: tuple[int, ...]

    def __post_init__(self) -> None:
        inc = tuple(int(n) for n in self.increments)
        object.__setattr__(self, "increments", inc)
        if not inc:
            raise ValueError("a plan needs at least one stage")
        for n in inc:
            if n < 1:
                raise ValueError(f"every stage must add at least one layer, got {inc}")

    def __iter__(self):
        return iter(self.increments)

    def __len__(self) -> int:
        return len(self.increments)

    @property
    def stage_count(self) -> int:
        return len(self.increments)

    @property
    def cumulative(self) -> tuple[int, ...]:
        return tuple(itertools.accumulate(self.increments))

    @property
    def target_layers(self) -> int:
        return sum(self.increments)

    def describe(self) -> str:
        """Cumulative depth chain, e.g. '14 -> 24'."""
        return " -> ".join(str(n) for n in self.cumulative)


def _byte_coeffs(shape: ModelShape) -> tuple[int, int]:
    p = layer_params(shape.hidden_dim)
    e = adapter_params(shape.hidden_dim, shape.adapter_rank)
    return 16 * p, 2 * p + 16 * e


def _check_targets(layer_target: int, stage_count: int) -> None:
    if stage_count < 1:
        raise ValueError(f"stage_count must be >= 1, got {stage_count}")
    if layer_target < 1:
        raise ValueError(f"layer_target must be >= 1, got {layer_target}")
    if stage_count > layer_target:
        raise PlanInfeasibleError(
            f"cannot split {layer_target} layers into {stage_count} stages of >= 1 layer")


def solve_exact(layer_target: int, stage_count: int, shape: ModelShape) -> StagePlan:
    """Optimal plan by dynamic programming over (stage, cumulative layers).

    M[i][N] is the best achievable worst-stage bytes using exactly i stages
    to reach N layers.  Among peak-optimal plans, reconstruction walks
    backward choosing the smallest feasible last-stage bytes at every step,
    i.e. it minimizes (bytes_K, ..., bytes_1) lexicographically.

    Embedding add-ons shift every stage by the same constant, so they cannot
    change the argmin and are deliberately not a parameter here.
    """
    _check_targets(layer_target, stage_count)
    c1, c2 = _byte_coeffs(shape)
    L, K = layer_target, stage_count

    def bytes_of(prior: int, new: int) -> int:
        return c1 * new + c2 * prior

    infinite = float("inf")
    # M[i] maps cumulative layer count -> minimal worst-stage bytes so far.
    prev = {0: 0}
    tables: list[dict[int, int]] = [prev]
    for i in range(1, K + 1):
        cur: dict[int, int] = {}
        # Stage i can end anywhere that leaves >= 1 layer per remaining stage.
        for total in range(i, L - (K - i) + 1):
            best = infinite
            for prior, worst in prev.items():
                if prior >= total:
                    continue
                cand = max(worst, bytes_of(prior, total - prior))
                if cand < best:
                    best = cand
            cur[total] = best
        tables.append(cur)
        prev = cur
    objective = tables[K][L]

    # Backward greedy: at each stage pick the predecessor with the cheapest
    # stage bytes among those still compatible with the optimal peak.
    cumulative = [0] * (K + 1)
    cumulative[K] = L
    for i in range(K, 0, -1):
        total = cumulative[i]
        best_key = None
        best_prior = None
        for prior, worst in tables[i - 1].items():
            if prior >= total or worst > objective:
                continue
            b = bytes_of(prior, total - prior)
            if b > objective:
                continue
            key = (b, -prior)
            if best_key is None or key < best_key:
                best_key = key
                best_prior = prior
        assert best_prior is not None, "DP table inconsistent"
        cumulative[i - 1] = best_prior

    plan = StagePlan(tuple(
        cumulative[i] - cumulative[i - 1] for i in range(1, K + 1)))
    got = max(bytes_of(plan.cumulative[i] - plan.increments[i], plan.increments[i])
              for i in range(K))
    assert got == objective, "reconstructed plan misses DP objective"
    return plan


def brute_force_plan(layer_target: int, stage_count: int, shape: ModelShape,
                     limit: int = 2_000_000) -> tuple[StagePlan, int]:
    """Enumerate every composition; returns (best plan, its peak bytes).

    Slow-path oracle for validating solve_exact.  Ties on the peak break by
    lexicographically smaller later-stage bytes, then by larger early
    increments; with the integer coefficients here ties cannot actually
    occur between distinct plans, but the rule keeps the choice total.
    """
    _check_targets(layer_target, stage_count)
    n_compositions = comb(layer_target - 1, stage_count - 1)
    if n_compositions > limit:
        raise InstanceTooLargeError(
            f"{n_compositions} compositions exceeds limit {limit}")
    c1, c2 = _byte_coeffs(shape)
    best_key = None
    best_plan = None
    for cuts in itertools.combinations(range(1, layer_target), stage_count - 1):
        cum = (*cuts, layer_target)
        inc = tuple(b - a for a, b in zip((0, *cuts), cum))
        per = tuple(c1 * n + c2 * prior
                    for n, prior in zip(inc, (0, *cum[:-1])))
        key = (max(per), tuple(reversed(per)), tuple(-n for n in inc))
        if best_key is None or key < best_key:
            best_key = key
            best_plan = inc
    return StagePlan(best_plan), best_key[0]


def equal_memory_relaxation(layer_target: int, stage_count: int,
                            shape: ModelShape) -> list[float]:
    """Continuous stage sizes that equalize per-stage bytes exactly.

    Geometric profile n_{i+1} = q n_i with q = (14P - 16E)/16P.  Raises
    PlanInfeasibleError when q <= 0 (adapters so large that later stages can
    never match stage 1 at positive size).
    """
    _check_targets(layer_target, stage_count)
    p = layer_params(shape.hidden_dim)
    e = adapter_params(shape.hidden_dim, shape.adapter_rank)
    if stage_count == 1:
        return [float(layer_target)]
    q = (14 * p - 16 * e) / (16 * p)
    if q <= 0.0:
        raise PlanInfeasibleError(
            "equal-memory ratio is non-positive; adapter cost swamps the "
            "frozen-layer saving at this shape")
    n1 = layer_target * (1.0 - q) / (1.0 - q ** stage_count)
    return [n1 * q ** i for i in range(stage_count)]


def _round_half_up(x: float) -> int:
    return int(x + 0.5)


def solve_rounded(layer_target: int, stage_count: int, shape: ModelShape) -> StagePlan:
    """Plan from the equal-memory relaxation, rounded half-up per stage.

    Stages 1..K-1 round independently; the last stage absorbs the remainder
    so the total stays exact.  Infeasible when the relaxation has no
    positive solution or rounding pushes any stage below one layer.
    """
    sizes = equal_memory_relaxation(layer_target, stage_count, shape)
    inc = [_round_half_up(x) for x in sizes[:-1]]
    inc.append(layer_target - sum(inc))
    if any(n < 1 for n in inc):
        raise PlanInfeasibleError(
            f"rounded plan {inc} leaves a stage below one layer")
    return StagePlan(tuple(inc))


# ---------------------------------------------------------------------------
# Training-compute estimates
# ---------------------------------------------------------------------------

def flops_vanilla(params: int, tokens: int) -> int:
    """Classic full-training estimate: 6 * params * tokens."""
    if params < 0 or tokens < 0:
        raise ValueError("params and tokens must be non-negative")
    return FLOPS_PER_TRAINABLE_PARAM_TOKEN * params * tokens


def stage_flops(trainable_params: int, frozen_params: int, tokens: int) -> int:
    """One stage: trainable params cost 6/token, frozen params 2/token."""
    if min(trainable_params, frozen_params, tokens) < 0:
        raise ValueError("parameter and token counts must be non-negative")
    return (FLOPS_PER_TRAINABLE_PARAM_TOKEN * trainable_params
            + FLOPS_PER_FROZEN_PARAM_TOKEN * frozen_params) * tokens


def flops_staged(stages: Iterable[tuple[int, int, int]]) -> int:
    """Sum stage_flops over (trainable, frozen, tokens) triples."""
    return sum(stage_flops(t, f, tok) for t, f, tok in stages)


def stage_param_counts(plan, shape: ModelShape) -> list[tuple[int, int]]:
    """Non-embedding (trainable, frozen) parameter counts for each stage.

    Stage i trains its n_i new layers plus adapters on all prior layers;
    the prior layers' own weights are frozen.
    """
    plan = plan if isinstance(plan, StagePlan) else StagePlan(tuple(plan))
    p = layer_params(shape.hidden_dim)
    e = adapter_params(shape.hidden_dim, shape.adapter_rank)
    out = []
    prior = 0
    for n in plan.increments:
        out.append((n * p + prior * e, prior * p))
        prior += n
    return out


def split_steps(total_steps: int, stage_count: int, growth_fraction: float) -> list[int]:
    """Integer optimizer steps per stage under the recursive fraction rule.

    Each growth event fires after growth_fraction of the steps remaining at
    that stage's start; the final stage takes everything left.  A fraction
    of 1.0 degenerates to all steps in stage 1 (growth at the very end).
    """
    if total_steps < 0:
        raise ValueError(f"total_steps must be >= 0, got {total_steps}")
    if stage_count < 1:
        raise ValueError(f"stage_count must be >= 1, got {stage_count}")
    if not 0.0 < growth_fraction <= 1.0:
        raise ValueError(f"growth_fraction must be in (0, 1], got {growth_fraction}")
    steps = []
    remaining = total_steps
    for _ in range(stage_count - 1):
        s = _round_half_up(growth_fraction * remaining)
        s = min(s, remaining)
        steps.append(s)
        remaining -= s
    steps.append(remaining)
    return steps


@dataclass(frozen=True)
class StageBudget:
    stage: int
    trainable_params: int
    frozen_params: int
    steps: int
    tokens: int
    flops: int


@dataclass(frozen=True)
class FlopsBudget:
    per_stage: tuple[StageBudget, ...]
    total_steps: int
    total_tokens: int
    total_flops: int


def token_budget(plan, shape: ModelShape, flops_budget: int,
                 growth_fraction: float, batch_tokens: int) -> FlopsBudget:
    """Steps/tokens per stage so staged training spends `flops_budget`.

    Solves for the total step count against the stage-weighted cost of one
    step, then nudges the integer total so the exact stage-split total lands
    closest to the budget (within one batch of it).
    """
    plan = plan if isinstance(plan, StagePlan) else StagePlan(tuple(plan))
    if flops_budget <= 0:
        raise BudgetError(f"flops_budget must be positive, got {flops_budget}")
    if batch_tokens < 1:
        raise ValueError(f"batch_tokens must be >= 1, got {batch_tokens}")
    if not 0.0 < growth_fraction <= 1.0:
        raise ValueError(f"growth_fraction must be in (0, 1], got {growth_fraction}")

    counts = stage_param_counts(plan, shape)
    per_token = [FLOPS_PER_TRAINABLE_PARAM_TOKEN * t
                 + FLOPS_PER_FROZEN_PARAM_TOKEN * f for t, f in counts]

    # Fraction of all steps each stage receives under the recursive rule.
    k = plan.stage_count
    weights = []
    remaining = 1.0
    for _ in range(k - 1):
        weights.append(growth_fraction * remaining)
        remaining *= 1.0 - growth_fraction
    weights.append(remaining)
    weighted_step = batch_tokens * sum(w * c for w, c in zip(weights, per_token))
    if weighted_step <= 0.0:
        raise BudgetError("degenerate plan: zero cost per step")

    base = int(flops_budget / weighted_step)

    def exact_total(total_steps: int) -> tuple[int, list[int]]:
        steps = split_steps(total_steps, k, growth_fraction)
        return sum(s * c * batch_tokens for s, c in zip(steps, per_token)), steps

    best = None
    for cand in range(max(k, base - 1), base + 3):
        total, steps = exact_total(cand)
        if any(s < 1 for s in steps):
            continue
        key = (abs(total - flops_budget), cand)
        if best is None or key < best[0]:
            best = (key, cand, steps, total)
    if best is None:
        raise BudgetError(
            f"budget {flops_budget} cannot fund one step per stage at "
            f"batch_tokens={batch_tokens}")
    _, total_steps, steps, _ = best

    per_stage = []
    for i, (s, (t, f), c) in enumerate(zip(steps, counts, per_token), start=1):
        tokens = s * batch_tokens
        per_stage.append(StageBudget(
            stage=i, trainable_params=t, frozen_params=f,
            steps=s, tokens=tokens, flops=c * tokens))
    return FlopsBudget(
        per_stage=tuple(per_stage),
        total_steps=sum(steps),
        total_tokens=sum(b.tokens for b in per_stage),
        total_flops=sum(b.flops for b in per_stage))
