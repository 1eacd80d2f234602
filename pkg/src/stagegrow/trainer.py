"""Staged training loop: AdamW, warmup/cosine/rewarm schedule, growth events.

One run executes a whole stage plan.  Stage boundaries fire after a
configured fraction of the steps remaining at each boundary; at a boundary
the loop merges any live adapters into their dense weights, grows the model
per the plan, freezes every previously trained layer, drops those layers'
optimizer state, attaches fresh adapters to all frozen layers, and linearly
rewarms the learning rate back to its peak before resuming cosine decay.
Embeddings stay trainable throughout and keep their optimizer moments.

The ledger records, per stage, the exact parameter census, token and FLOPs
spend (6 per trainable and 2 per frozen parameter-token), and a simulated
device-memory figure at 16 bytes per trainable and 2 per frozen parameter
slot; these reconcile exactly with the planning formulas in
stagegrow.memory / stagegrow.planner for the same shape.
"""

from __future__ import annotations

import json
import math
import time
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import data as data_lib
from . import model as model_lib
from .autodiff import NonFiniteError, Tensor
from .growth import (AdapterSpec, GrowthSpec, adapted_layer_indices,
                     attach_adapters, freeze_layers, grow, merge_adapters,
                     new_layer_indices, reset_adapters)
from .memory import FROZEN_BYTES, TRAINABLE_BYTES
from .model import ModelConfig, ToyModel, build_model, param_counts
from .planner import (FLOPS_PER_FROZEN_PARAM_TOKEN,
                      FLOPS_PER_TRAINABLE_PARAM_TOKEN, StagePlan, split_steps)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; the ledger was flushed first."""


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    peak_lr: float = 3e-3
    warmup_steps: int = 0
    restart_warmup_steps: int = 0
    batch_size: int = 8
    seq_len: int = 64
    growth_fraction: float = 0.75
    adapter_reset_interval: int | None = None
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    min_lr_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(
                f"warmup_steps must be in [0, total_steps], got {self.warmup_steps}")
        if self.restart_warmup_steps < 0:
            raise ValueError("restart_warmup_steps must be >= 0")
        if self.peak_lr <= 0:
            raise ValueError(f"peak_lr must be positive, got {self.peak_lr}")
        # 1.0 allowed deliberately: growth fires at the very end and the
        # final stage trains for zero steps (the 100% timing ablation cell).
        if not 0.0 < self.growth_fraction <= 1.0:
            raise ValueError(
                f"growth_fraction must be in (0, 1], got {self.growth_fraction}")
        if self.batch_size < 1 or self.seq_len < 1:
            raise ValueError("batch_size and seq_len must be >= 1")
        if self.adapter_reset_interval is not None and self.adapter_reset_interval < 1:
            raise ValueError("adapter_reset_interval must be >= 1 or None")

    @property
    def batch_tokens(self) -> int:
        return self.batch_size * self.seq_len


@dataclass(frozen=True)
class GrowthOptions:
    """How growth events behave; adapter_rank 0 disables adapters."""

    position: str = "upper"
    init: str = "mean"
    fpi: bool = False
    adapter_rank: int = 8
    adapter_scale: float | None = None

    def adapter_spec(self) -> AdapterSpec | None:
        if self.adapter_rank == 0:
            return None
        return AdapterSpec(rank=self.adapter_rank, scale=self.adapter_scale)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

def adamw_step(params: list[tuple[str, Tensor]], state: dict, lr: float,
               betas: tuple[float, float] = (0.9, 0.95), eps: float = 1e-8,
               weight_decay: float = 0.1) -> None:
    """One decoupled-weight-decay Adam update, in place.

    State is keyed by parameter name.  Decay applies to matrices only
    (ndim >= 2); norm gains are left undecayed.  Callers must have checked
    gradients for finiteness; parameters without a gradient are skipped.
    """
    b1, b2 = betas
    for name, t in params:
        g = t.grad
        if g is None:
            continue
        st = state.get(name)
        if st is None:
            st = state[name] = {
                "m": np.zeros_like(t.data), "v": np.zeros_like(t.data), "t": 0}
        st["t"] += 1
        st["m"] = b1 * st["m"] + (1.0 - b1) * g
        st["v"] = b2 * st["v"] + (1.0 - b2) * np.square(g)
        m_hat = st["m"] / (1.0 - b1 ** st["t"])
        v_hat = st["v"] / (1.0 - b2 ** st["t"])
        update = m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay and t.data.ndim >= 2:
            update = update + weight_decay * t.data
        t.data -= (lr * update).astype(t.data.dtype)


def global_grad_norm(params: list[tuple[str, Tensor]]) -> float:
    total = 0.0
    for _, t in params:
        if t.grad is not None:
            total += float(np.sum(np.square(t.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_gradients(params: list[tuple[str, Tensor]], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm; returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if math.isfinite(norm) and norm > max_norm > 0:
        factor = max_norm / norm
        for _, t in params:
            if t.grad is not None:
                t.grad *= factor
    return norm


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------

def lr_at(step: int, growth_steps, config: TrainConfig) -> float:
    """Learning rate for optimizer step `step` (0-based).

    Stage 1: linear warmup to the peak over warmup_steps, then cosine decay
    toward min_lr_fraction * peak at total_steps.  After a growth event at
    step g: linear ramp from the schedule's decayed value at g back to the
    peak over restart_warmup_steps, then a fresh cosine from there to the
    same floor at total_steps.
    """
    events = sorted(g for g in growth_steps if g > 0)
    peak = config.peak_lr
    floor = peak * config.min_lr_fraction
    total = config.total_steps

    def cosine(s: float, anchor: float) -> float:
        if total <= anchor:
            return peak
        progress = min(1.0, max(0.0, (s - anchor) / (total - anchor)))
        return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * progress))

    def segment_value(j: int, s: float) -> float:
        if j == 0:
            w = config.warmup_steps
            if s < w:
                return peak * s / w
            return cosine(s, w)
        g = events[j - 1]
        r = config.restart_warmup_steps
        if s < g + r:
            start = segment_value(j - 1, g)
            return start + (peak - start) * (s - g) / r
        return cosine(s, g + r)

    return segment_value(bisect_right(events, step), step)


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

@dataclass
class StageRecord:
    stage: int
    layer_increment: int
    cumulative_layers: int
    trainable_params: int
    frozen_params: int
    adapter_params: int
    simulated_bytes: int
    steps: int = 0
    tokens: int = 0
    flops: int = 0
    final_train_loss: float | None = None
    val_loss: float | None = None
    val_ppl: float | None = None
    wall_seconds: float = 0.0
    loss_curve: list[float] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "layer_increment": self.layer_increment,
            "cumulative_layers": self.cumulative_layers,
            "trainable_params": self.trainable_params,
            "frozen_params": self.frozen_params,
            "adapter_params": self.adapter_params,
            "simulated_bytes": self.simulated_bytes,
            "steps": self.steps,
            "tokens": self.tokens,
            "flops": self.flops,
            "final_train_loss": self.final_train_loss,
            "val_loss": self.val_loss,
            "val_ppl": self.val_ppl,
            # wall_seconds deliberately not serialized: ledgers from
            # identical runs must be byte-identical.
            "loss_curve": self.loss_curve,
            "events": self.events,
        }


@dataclass
class RunLedger:
    stages: list[StageRecord] = field(default_factory=list)

    @property
    def peak_simulated_bytes(self) -> int:
        return max(s.simulated_bytes for s in self.stages)

    @property
    def total_steps(self) -> int:
        return sum(s.steps for s in self.stages)

    @property
    def total_tokens(self) -> int:
        return sum(s.tokens for s in self.stages)

    @property
    def total_flops(self) -> int:
        return sum(s.flops for s in self.stages)

    def to_dict(self) -> dict:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "peak_simulated_bytes": self.peak_simulated_bytes,
            "total_steps": self.total_steps,
            "total_tokens": self.total_tokens,
            "total_flops": self.total_flops,
        }


def simulated_bytes(model: ToyModel) -> int:
    """16 B per trainable and 2 B per frozen parameter slot, from the live census."""
    counts = param_counts(model)
    return TRAINABLE_BYTES * counts.trainable + FROZEN_BYTES * counts.frozen_layer


@dataclass
class RunResult:
    model: ToyModel
    ledger: RunLedger
    out_dir: Path | None


class _RunWriter:
    """NDJSON step/event log plus ledger flushing."""

    def __init__(self, out_dir: Path | None):
        self.out_dir = out_dir
        self._log = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            self._log = open(out_dir / "log.ndjson", "w")

    def record(self, payload: dict) -> None:
        if self._log is not None:
            self._log.write(json.dumps(payload, sort_keys=True) + "\n")

    def flush_ledger(self, ledger: RunLedger) -> None:
        if self.out_dir is not None:
            (self.out_dir / "ledger.json").write_text(
                json.dumps(ledger.to_dict(), indent=2, sort_keys=True) + "\n")
            self._log.flush()

    def close(self) -> None:
        if self._log is not None:
            self._log.close()


def run_schedule(model_config: ModelConfig, plan: StagePlan, config: TrainConfig,
                 growth: GrowthOptions, train_stream: data_lib.TokenStream,
                 val_stream: data_lib.TokenStream | None, *,
                 eval_batch_size: int = 8, eval_max_windows: int | None = None,
                 out_dir: str | Path | None = None,
                 checkpoint_extra: dict | None = None,
                 dtype=np.float32) -> RunResult:
    """Train a full stage plan from scratch; returns the model and ledger.

    model_config.layer_count must equal the plan's first increment; growth
    events supply the rest.  With a single-stage plan this is exactly a
    plain training loop.  A non-finite loss aborts with DivergenceError
    after flushing the ledger; non-finite gradients skip the step.
    """
    plan = plan if isinstance(plan, StagePlan) else StagePlan(tuple(plan))
    if model_config.layer_count != plan.increments[0]:
        raise ValueError(
            f"model_config.layer_count {model_config.layer_count} must match "
            f"the first stage increment {plan.increments[0]}")
    adapter_spec = growth.adapter_spec()

    out_path = Path(out_dir) if out_dir is not None else None
    writer = _RunWriter(out_path)
    ledger = RunLedger()

    model = build_model(model_config, seed=config.seed, dtype=dtype)
    batches = data_lib.batch_cycle(
        train_stream, config.seq_len, config.batch_size, seed=config.seed + 1)
    stage_steps = split_steps(config.total_steps, plan.stage_count,
                              config.growth_fraction)
    opt_state: dict = {}
    global_step = 0

    try:
        for stage_i, n_steps in enumerate(stage_steps, start=1):
            stage_start = time.perf_counter()
            events: list[dict] = []

            if stage_i > 1:
                # Boundary: merge adapters, grow, freeze old, fresh adapters.
                merge_adapters(model)
                opt_state = {k: v for k, v in opt_state.items()
                             if not k.startswith("layers.")}
                before = list(model.layers)
                spec = GrowthSpec(
                    new_layer_count=plan.increments[stage_i - 1],
                    position=growth.position, init=growth.init, fpi=growth.fpi,
                    seed=config.seed + 100 + stage_i)
                grow(model, spec)
                fresh = set(new_layer_indices(model, before))
                old = [i for i in range(len(model.layers)) if i not in fresh]
                freeze_layers(model, old)
                if adapter_spec is not None:
                    attach_adapters(model, old, adapter_spec,
                                    seed=config.seed + 200 + stage_i)
                event = {"kind": "event", "event": "grow", "step": global_step,
                         "stage": stage_i, "new_layers": sorted(fresh),
                         "frozen_layers": old}
                events.append(event)
                writer.record(event)

            counts = param_counts(model)
            record = StageRecord(
                stage=stage_i,
                layer_increment=plan.increments[stage_i - 1],
                cumulative_layers=model.layer_count,
                trainable_params=counts.trainable,
                frozen_params=counts.frozen_layer,
                adapter_params=counts.adapter,
                simulated_bytes=simulated_bytes(model),
                events=events)
            ledger.stages.append(record)
            flops_per_token = (
                FLOPS_PER_TRAINABLE_PARAM_TOKEN * counts.trainable
                + FLOPS_PER_FROZEN_PARAM_TOKEN * counts.frozen_layer)

            growth_boundaries = [sum(stage_steps[:j]) for j in range(1, stage_i)]
            steps_since_attach = 0
            for _ in range(n_steps):
                lr = lr_at(global_step, growth_boundaries, config)
                inputs, targets = next(batches)
                trainables = model_lib.trainable_parameters(model)
                for _, t in trainables:
                    t.zero_grad()
                try:
                    logits = model_lib.forward(model, inputs)
                    loss = ad.cross_entropy(logits, targets)
                    loss_value = float(loss.data)
                    if not math.isfinite(loss_value):
                        raise NonFiniteError("loss is not finite")
                    loss.backward()
                except NonFiniteError as exc:
                    event = {"kind": "event", "event": "diverged",
                             "step": global_step, "stage": stage_i,
                             "detail": str(exc)}
                    record.events.append(event)
                    writer.record(event)
                    record.wall_seconds = time.perf_counter() - stage_start
                    raise DivergenceError(
                        f"non-finite loss at step {global_step}: {exc}") from exc

                norm = clip_gradients(trainables, config.grad_clip)
                if math.isfinite(norm):
                    adamw_step(trainables, opt_state, lr, config.betas,
                               config.eps, config.weight_decay)
                else:
                    event = {"kind": "event", "event": "skipped_nonfinite_grads",
                             "step": global_step, "stage": stage_i}
                    record.events.append(event)
                    writer.record(event)

                record.steps += 1
                record.tokens += targets.size
                record.flops += flops_per_token * targets.size
                record.loss_curve.append(loss_value)
                record.final_train_loss = loss_value
                writer.record({"kind": "step", "step": global_step,
                               "stage": stage_i, "lr": lr, "loss": loss_value,
                               "grad_norm": norm, "tokens": record.tokens})
                global_step += 1
                steps_since_attach += 1

                if (config.adapter_reset_interval is not None
                        and adapter_spec is not None
                        and adapted_layer_indices(model)
                        and steps_since_attach % config.adapter_reset_interval == 0):
                    reset_adapters(model, adapter_spec,
                                   seed=config.seed + 300 + global_step)
                    opt_state = {k: v for k, v in opt_state.items()
                                 if ".adapters." not in k}
                    event = {"kind": "event", "event": "adapter_reset",
                             "step": global_step, "stage": stage_i}
                    record.events.append(event)
                    writer.record(event)

            if val_stream is not None:
                report = data_lib.perplexity(
                    model, val_stream, config.seq_len,
                    batch_size=eval_batch_size, max_windows=eval_max_windows)
                record.val_loss = report.loss
                record.val_ppl = report.ppl
                writer.record({"kind": "event", "event": "eval",
                               "step": global_step, "stage": stage_i,
                               "val_loss": report.loss, "val_ppl": report.ppl})
            record.wall_seconds = time.perf_counter() - stage_start

            if out_path is not None:
                extra = dict(checkpoint_extra or {})
                extra.update({
                    "stage": stage_i,
                    "seq_len": config.seq_len,
                    "eval_batch_size": eval_batch_size,
                    "eval_max_windows": eval_max_windows,
                    "corpus_digest": train_stream.digest,
                    "val_loss": record.val_loss,
                    "val_ppl": record.val_ppl,
                })
                ckpt.save_checkpoint(
                    model, out_path / "checkpoints" / f"stage_{stage_i:02d}",
                    extra=extra)
            writer.flush_ledger(ledger)
    finally:
        writer.flush_ledger(ledger)
        writer.close()

    return RunResult(model=model, ledger=ledger, out_dir=out_path)
