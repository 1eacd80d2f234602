"""Walk through the byte accounting and the stage planner.

Training a decoder holds 16 bytes per trainable parameter (fp16 weight +
fp16 gradient + fp32 master copy + two fp32 Adam moments) but only 2 bytes
per frozen one.  Growing a model in stages therefore trades a longer
schedule for a much smaller worst-case resident state.  This script prices
that trade for three familiar sizes and lets the solver pick the split.

Run: python3 demos/01_memory_planning.py
"""
from stagegrow.memory import (ModelShape, format_gb, layer_params,
                              plan_peak_bytes, vanilla_state_bytes)
from stagegrow.planner import StagePlan, solve_exact, solve_rounded, token_budget

SIZES = [
    # label, hidden_dim, layers, adapter rank
    ("368M", 1600, 12, 128),
    ("680M", 1536, 24, 128),
    ("1.2B", 2048, 24, 128),
]


def show(label, hidden, layers, rank, stages):
    shape = ModelShape(hidden, layers, adapter_rank=rank)
    vanilla = vanilla_state_bytes(layers, hidden)
    rounded = solve_rounded(layers, stages, shape)
    exact = solve_exact(layers, stages, shape)

    print(f"\n{label}: d={hidden}, {layers} layers "
          f"({layer_params(hidden):,} params/layer), {stages} stages")
    print(f"  all-at-once state: {format_gb(vanilla)}")
    for name, plan in (("rounded", rounded), ("exact", exact)):
        est = plan_peak_bytes(plan, shape)
        cut = 100.0 * (1.0 - est.peak_bytes / vanilla)
        per = ", ".join(format_gb(b) for b in est.per_stage_bytes)
        print(f"  {name:7s} plan {plan.increments}: peak {format_gb(est.peak_bytes)}"
              f" (stage {est.peak_stage}), -{cut:.1f}%  [{per}]")


for label, hidden, layers, rank in SIZES:
    show(label, hidden, layers, rank, stages=2)

# Three stages buy more at the largest size.
show("1.2B", 2048, 24, 128, stages=3)

# Given a compute budget, the same stage weights convert it into a step and
# token schedule: frozen parameters cost 2 flops/token instead of 6.
print("\nToken budget for the 368M two-stage plan at 1.63e19 flops,")
print("360K-token batches, growth after 75% of the steps:")
budget = token_budget(StagePlan((7, 5)), ModelShape(1600, 12, adapter_rank=128),
                      16_300_000_000_000_000_000, 0.75, 360_000)
for stage in budget.per_stage:
    print(f"  stage {stage.stage}: {stage.steps:>6,} steps  "
          f"{stage.tokens / 1e9:6.2f}B tokens  "
          f"({stage.trainable_params / 1e6:.0f}M trainable, "
          f"{stage.frozen_params / 1e6:.0f}M frozen)")
print(f"  total: {budget.total_steps:,} steps, "
      f"{budget.total_tokens / 1e9:.2f}B tokens, "
      f"{budget.total_flops:.3e} flops")
