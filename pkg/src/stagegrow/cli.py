"""Command-line front end: plan, train, eval, ablate.

Exit codes: 0 success, 2 invalid input (bad flags, malformed config,
missing files, corrupt checkpoints), 3 infeasible plan or budget,
4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt
from . import data as data_lib
from . import memory as memory_lib
from . import planner as planner_lib
from .growth import GrowthError, INITS, POSITIONS
from .memory import ModelShape, format_gb
from .model import ModelConfig
from .planner import (BudgetError, PlanInfeasibleError, StagePlan,
                      solve_exact, solve_rounded, token_budget)
from .trainer import (DivergenceError, GrowthOptions, TrainConfig,
                      run_schedule)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    """Malformed run configuration; message carries the JSON path."""


# ---------------------------------------------------------------------------
# Config file schema (version 1)
# ---------------------------------------------------------------------------

def _check_keys(obj: dict, path: str, allowed: set[str], required: set[str]) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{path}: missing required field(s) {sorted(missing)}")


def load_run_config(path: str | Path) -> dict:
    """Parse and validate a training config file; returns the raw dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    _check_keys(cfg, "$", {"version", "run_dir", "corpus", "validation_fraction",
                           "model", "plan", "growth", "train", "eval"},
                {"version", "run_dir", "corpus", "model", "plan", "train"})
    if cfg["version"] != 1:
        raise ConfigError(f"$.version: unsupported version {cfg['version']!r}")
    if not isinstance(cfg["run_dir"], str) or not cfg["run_dir"]:
        raise ConfigError("$.run_dir: expected a non-empty string")
    corpus = cfg["corpus"]
    if isinstance(corpus, str):
        corpus = [corpus]
    if (not isinstance(corpus, list) or not corpus
            or not all(isinstance(p, str) for p in corpus)):
        raise ConfigError("$.corpus: expected a path or non-empty list of paths")
    cfg["corpus"] = corpus

    _check_keys(cfg["model"], "$.model",
                {"hidden_dim", "head_count", "vocab_size", "max_seq_len",
                 "tied_embeddings", "rope_base"},
                {"hidden_dim", "head_count"})
    plan = cfg["plan"]
    _check_keys(plan, "$.plan", {"increments", "layers", "stages", "mode"}, set())
    if "increments" in plan:
        if set(plan) - {"increments"}:
            raise ConfigError("$.plan: increments excludes layers/stages/mode")
        if (not isinstance(plan["increments"], list) or not plan["increments"]
                or not all(isinstance(n, int) and n >= 1 for n in plan["increments"])):
            raise ConfigError("$.plan.increments: expected a list of ints >= 1")
    else:
        for key in ("layers", "stages"):
            if not isinstance(plan.get(key), int):
                raise ConfigError(f"$.plan.{key}: required int when increments absent")
        if plan.get("mode", "exact") not in ("exact", "rounded"):
            raise ConfigError("$.plan.mode: expected 'exact' or 'rounded'")

    _check_keys(cfg.get("growth", {}), "$.growth",
                {"position", "init", "fpi", "adapter_rank", "adapter_scale"}, set())
    _check_keys(cfg["train"], "$.train",
                {"total_steps", "peak_lr", "warmup_steps", "restart_warmup_steps",
                 "batch_size", "seq_len", "growth_fraction",
                 "adapter_reset_interval", "seed", "betas", "eps",
                 "weight_decay", "grad_clip", "min_lr_fraction"},
                {"total_steps"})
    _check_keys(cfg.get("eval", {}), "$.eval", {"batch_size", "max_windows"}, set())
    vf = cfg.get("validation_fraction", 0.1)
    if not isinstance(vf, (int, float)) or not 0.0 < vf < 1.0:
        raise ConfigError("$.validation_fraction: expected a number in (0, 1)")
    return cfg


def _build_parts(cfg: dict):
    """Turn a validated config dict into typed pieces (no I/O)."""
    growth_cfg = cfg.get("growth", {})
    try:
        growth = GrowthOptions(
            position=growth_cfg.get("position", "upper"),
            init=growth_cfg.get("init", "mean"),
            fpi=bool(growth_cfg.get("fpi", False)),
            adapter_rank=int(growth_cfg.get("adapter_rank", 8)),
            adapter_scale=growth_cfg.get("adapter_scale"))
        if growth.position not in POSITIONS:
            raise ConfigError(f"$.growth.position: expected one of {POSITIONS}")
        if growth.init not in INITS:
            raise ConfigError(f"$.growth.init: expected one of {INITS}")

        plan_cfg = cfg["plan"]
        model_cfg = cfg["model"]
        if "increments" in plan_cfg:
            plan = StagePlan(tuple(plan_cfg["increments"]))
        else:
            shape = ModelShape(hidden_dim=model_cfg["hidden_dim"],
                               layer_count=plan_cfg["layers"],
                               adapter_rank=growth.adapter_rank)
            solver = solve_exact if plan_cfg.get("mode", "exact") == "exact" else solve_rounded
            plan = solver(plan_cfg["layers"], plan_cfg["stages"], shape)

        model = ModelConfig(
            hidden_dim=model_cfg["hidden_dim"],
            layer_count=plan.increments[0],
            head_count=model_cfg["head_count"],
            vocab_size=model_cfg.get("vocab_size", 256),
            max_seq_len=model_cfg.get("max_seq_len", 512),
            tied_embeddings=bool(model_cfg.get("tied_embeddings", False)),
            rope_base=float(model_cfg.get("rope_base", 10000.0)))

        train_cfg = cfg["train"]
        betas = train_cfg.get("betas", [0.9, 0.95])
        if (not isinstance(betas, (list, tuple)) or len(betas) != 2
                or not all(isinstance(b, (int, float)) for b in betas)):
            raise ConfigError("$.train.betas: expected two numbers")
        train = TrainConfig(
            total_steps=train_cfg["total_steps"],
            peak_lr=float(train_cfg.get("peak_lr", 3e-3)),
            warmup_steps=int(train_cfg.get("warmup_steps", 0)),
            restart_warmup_steps=int(train_cfg.get("restart_warmup_steps", 0)),
            batch_size=int(train_cfg.get("batch_size", 8)),
            seq_len=int(train_cfg.get("seq_len", 64)),
            growth_fraction=float(train_cfg.get("growth_fraction", 0.75)),
            adapter_reset_interval=train_cfg.get("adapter_reset_interval"),
            seed=int(train_cfg.get("seed", 0)),
            betas=(float(betas[0]), float(betas[1])),
            eps=float(train_cfg.get("eps", 1e-8)),
            weight_decay=float(train_cfg.get("weight_decay", 0.1)),
            grad_clip=float(train_cfg.get("grad_clip", 1.0)),
            min_lr_fraction=float(train_cfg.get("min_lr_fraction", 0.1)))
    except (ValueError, GrowthError) as exc:
        if isinstance(exc, (ConfigError, PlanInfeasibleError)):
            raise
        raise ConfigError(str(exc)) from exc

    eval_cfg = cfg.get("eval", {})
    eval_opts = {"batch_size": int(eval_cfg.get("batch_size", 8)),
                 "max_windows": eval_cfg.get("max_windows")}
    return plan, model, train, growth, eval_opts


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

_SVG_COLORS = {
    "new_layer_state_bytes": "#4878cf",
    "frozen_param_bytes": "#9dbbe8",
    "adapter_state_bytes": "#e8a33d",
    "embedding_state_bytes": "#72b37a",
}


def memory_chart_svg(estimate: memory_lib.MemoryEstimate, vanilla_bytes: int) -> str:
    """Deterministic stacked-bar SVG: one bar per stage plus a vanilla bar."""
    bars = [(f"stage {s.stage}", s) for s in estimate.stages]
    n = len(bars) + 1
    width, height, pad, gap = 520, 300, 46, 18
    bar_w = (width - 2 * pad - (n - 1) * gap) / n
    top = max(vanilla_bytes, estimate.peak_bytes)
    scale = (height - 2 * pad) / top if top else 1.0

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="#ffffff"/>']
    x = float(pad)
    for label, stage in bars:
        y = height - pad
        for field_name, color in _SVG_COLORS.items():
            value = getattr(stage, field_name)
            if value <= 0:
                continue
            h = value * scale
            y -= h
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                f'height="{h:.1f}" fill="{color}"/>')
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{height - pad + 14}" '
            f'font-size="11" text-anchor="middle">{label}</text>')
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{y - 5:.1f}" font-size="10" '
            f'text-anchor="middle">{memory_lib.gigabytes(stage.total_bytes):.2f}G</text>')
        x += bar_w + gap
    h = vanilla_bytes * scale
    y = height - pad - h
    parts.append(
        f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{h:.1f}" '
        f'fill="#c85a5a"/>')
    parts.append(
        f'<text x="{x + bar_w / 2:.1f}" y="{height - pad + 14}" font-size="11" '
        f'text-anchor="middle">vanilla</text>')
    parts.append(
        f'<text x="{x + bar_w / 2:.1f}" y="{y - 5:.1f}" font-size="10" '
        f'text-anchor="middle">{memory_lib.gigabytes(vanilla_bytes):.2f}G</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_plan_reports(out_dir: Path, report: dict,
                        estimate: memory_lib.MemoryEstimate,
                        vanilla_bytes: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "stages.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "new_layers", "cumulative_layers",
                         "total_bytes", "new_layer_state_bytes",
                         "frozen_param_bytes", "adapter_state_bytes",
                         "embedding_state_bytes"])
        cumulative = 0
        for s in estimate.stages:
            cumulative += s.new_layers
            writer.writerow([s.stage, s.new_layers, cumulative, s.total_bytes,
                             s.new_layer_state_bytes, s.frozen_param_bytes,
                             s.adapter_state_bytes, s.embedding_state_bytes])
    (out_dir / "memory.svg").write_text(memory_chart_svg(estimate, vanilla_bytes))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_plan(args) -> int:
    shape = ModelShape(hidden_dim=args.hidden, layer_count=args.layers,
                       adapter_rank=args.rank)
    solver = solve_exact if args.mode == "exact" else solve_rounded
    plan = solver(args.layers, args.stages, shape)
    estimate = memory_lib.plan_peak_bytes(plan, shape, args.embedding_params)
    vanilla = memory_lib.vanilla_state_bytes(args.layers, args.hidden,
                                             args.embedding_params)
    reduction = 100.0 * (1.0 - estimate.peak_bytes / vanilla)

    print(f"plan ({args.mode}): {plan.describe()}  "
          f"[increments {', '.join(map(str, plan.increments))}]")
    for s in estimate.stages:
        print(f"  stage {s.stage}: +{s.new_layers} layers on {s.prior_layers} "
              f"frozen, {format_gb(s.total_bytes)}")
    print(f"peak {format_gb(estimate.peak_bytes)} (stage {estimate.peak_stage}); "
          f"vanilla {format_gb(vanilla)}; reduction {reduction:.1f}%")

    report = {
        "mode": args.mode,
        "hidden_dim": args.hidden,
        "layer_target": args.layers,
        "stage_count": args.stages,
        "adapter_rank": args.rank,
        "embedding_params": args.embedding_params,
        "plan": {"increments": list(plan.increments),
                 "cumulative": list(plan.cumulative)},
        "per_stage_bytes": list(estimate.per_stage_bytes),
        "peak_bytes": estimate.peak_bytes,
        "peak_stage": estimate.peak_stage,
        "vanilla_bytes": vanilla,
        "reduction_pct": reduction,
        "gpu_budget_bytes": args.gpu_budget_bytes,
        "token_budget": None,
    }

    status = EXIT_OK
    if args.gpu_budget_bytes is not None and estimate.peak_bytes > args.gpu_budget_bytes:
        print(f"infeasible: peak {format_gb(estimate.peak_bytes)} exceeds "
              f"budget {format_gb(int(args.gpu_budget_bytes))}", file=sys.stderr)
        status = EXIT_INFEASIBLE

    if args.flops_budget is not None:
        if args.batch_tokens is None:
            raise ConfigError("--flops-budget requires --batch-tokens")
        budget = token_budget(plan, shape, int(args.flops_budget),
                              args.growth_fraction, args.batch_tokens)
        print(f"compute budget {args.flops_budget:.3e} FLOPs at "
              f"{args.batch_tokens} tokens/step:")
        for b in budget.per_stage:
            print(f"  stage {b.stage}: {b.steps} steps, {b.tokens} tokens, "
                  f"{b.flops:.3e} FLOPs")
        print(f"total {budget.total_steps} steps, {budget.total_tokens} tokens, "
              f"{budget.total_flops:.3e} FLOPs")
        report["token_budget"] = {
            "flops_budget": int(args.flops_budget),
            "batch_tokens": args.batch_tokens,
            "growth_fraction": args.growth_fraction,
            "total_steps": budget.total_steps,
            "total_tokens": budget.total_tokens,
            "total_flops": budget.total_flops,
            "per_stage": [{"stage": b.stage, "steps": b.steps,
                           "tokens": b.tokens, "flops": b.flops,
                           "trainable_params": b.trainable_params,
                           "frozen_params": b.frozen_params}
                          for b in budget.per_stage],
        }

    _write_plan_reports(Path(args.out), report, estimate, vanilla)
    print(f"reports written to {args.out}/")
    return status


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.run_dir is not None:
        cfg["run_dir"] = args.run_dir
    plan, model_cfg, train_cfg, growth, eval_opts = _build_parts(cfg)

    # Validate inputs before touching the filesystem.
    missing = [p for p in cfg["corpus"] if not Path(p).is_file()]
    if missing:
        raise ConfigError(f"corpus file(s) not found: {missing}")
    run_dir = Path(cfg["run_dir"])
    if run_dir.exists():
        raise ConfigError(f"run_dir already exists: {run_dir}")

    vf = cfg.get("validation_fraction", 0.1)
    train_stream, val_stream = data_lib.load_corpus(cfg["corpus"], vf)

    run_dir.mkdir(parents=True)
    snapshot = dict(cfg)
    snapshot["plan"] = {"increments": list(plan.increments)}
    snapshot["corpus_digest"] = train_stream.digest
    (run_dir / "config.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n")

    result = run_schedule(
        model_cfg, plan, train_cfg, growth, train_stream, val_stream,
        eval_batch_size=eval_opts["batch_size"],
        eval_max_windows=eval_opts["max_windows"],
        out_dir=run_dir,
        checkpoint_extra={"validation_fraction": vf})

    last = result.ledger.stages[-1]
    (run_dir / "final_eval.json").write_text(json.dumps({
        "split": val_stream.split,
        "tokens": len(val_stream),
        "loss": last.val_loss,
        "ppl": last.val_ppl,
    }, indent=2, sort_keys=True) + "\n")

    print(f"trained plan {plan.describe()} for {result.ledger.total_steps} steps")
    print(f"peak simulated bytes {result.ledger.peak_simulated_bytes} "
          f"({format_gb(result.ledger.peak_simulated_bytes)})")
    print(f"final val ppl {last.val_ppl:.4f}" if last.val_ppl is not None
          else "no validation eval")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, manifest = ckpt.load_checkpoint(args.checkpoint)
    extra = manifest.get("extra", {})
    vf = args.validation_fraction
    if vf is None:
        vf = extra.get("validation_fraction", 0.1)
    seq_len = args.seq_len if args.seq_len is not None else extra.get("seq_len", 64)
    batch_size = (args.batch_size if args.batch_size is not None
                  else extra.get("eval_batch_size", 8))
    max_windows = (args.max_windows if args.max_windows is not None
                   else extra.get("eval_max_windows"))

    _, val_stream = data_lib.load_corpus(args.corpus, vf)
    recorded = extra.get("corpus_digest")
    if recorded is not None and recorded != val_stream.digest:
        print(f"note: corpus digest {val_stream.digest[:12]} differs from the "
              f"checkpoint's training corpus {recorded[:12]}", file=sys.stderr)

    report = data_lib.perplexity(model, val_stream, seq_len,
                                 batch_size=batch_size, max_windows=max_windows)
    payload = {"split": report.split, "tokens": report.tokens,
               "loss": report.loss, "ppl": report.ppl,
               "checkpoint": str(args.checkpoint),
               "corpus_digest": val_stream.digest}
    print(f"split={report.split} tokens={report.tokens} "
          f"loss={report.loss:.6f} ppl={report.ppl:.6f}")
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"report written to {args.out}")
    return EXIT_OK


ABLATION_CELLS = {
    "position": [("upper", {"position": "upper"}),
                 ("intermediate", {"position": "intermediate"}),
                 ("lower", {"position": "lower"}),
                 ("random", {"position": "random"})],
    "init": [("copy", {"init": "copy", "fpi": False}),
             ("copy+fpi", {"init": "copy", "fpi": True}),
             ("mean", {"init": "mean", "fpi": False}),
             ("mean+fpi", {"init": "mean", "fpi": True})],
    "timing": [("25%", {"growth_fraction": 0.25}),
               ("50%", {"growth_fraction": 0.50}),
               ("75%", {"growth_fraction": 0.75}),
               ("100%", {"growth_fraction": 1.00})],
    "pet": [("w/ PET", {"adapters": True}),
            ("w/o PET", {"adapters": False})],
}


def _cell_slug(label: str) -> str:
    return (label.replace("w/ ", "with_").replace("w/o ", "without_")
            .replace("%", "pct").replace("+", "_").lower())


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config)
    plan, model_cfg, train_cfg, growth, eval_opts = _build_parts(cfg)
    if plan.stage_count < 2:
        raise ConfigError("ablations need a plan with at least two stages")
    if args.axis == "pet" and growth.adapter_rank < 1:
        raise ConfigError("pet axis needs growth.adapter_rank >= 1 in the config")

    missing = [p for p in cfg["corpus"] if not Path(p).is_file()]
    if missing:
        raise ConfigError(f"corpus file(s) not found: {missing}")
    root = Path(args.out) if args.out else Path(cfg["run_dir"] + f"_ablate_{args.axis}")
    if root.exists():
        raise ConfigError(f"output directory already exists: {root}")

    vf = cfg.get("validation_fraction", 0.1)
    train_stream, val_stream = data_lib.load_corpus(cfg["corpus"], vf)

    rows = []
    for label, overrides in ABLATION_CELLS[args.axis]:
        cell_growth, cell_train = growth, train_cfg
        if "position" in overrides:
            cell_growth = replace(cell_growth, position=overrides["position"])
        if "init" in overrides:
            cell_growth = replace(cell_growth, init=overrides["init"],
                                  fpi=overrides["fpi"])
        if "adapters" in overrides and not overrides["adapters"]:
            cell_growth = replace(cell_growth, adapter_rank=0)
        if "growth_fraction" in overrides:
            cell_train = replace(cell_train,
                                 growth_fraction=overrides["growth_fraction"])
        result = run_schedule(
            model_cfg, plan, cell_train, cell_growth, train_stream, val_stream,
            eval_batch_size=eval_opts["batch_size"],
            eval_max_windows=eval_opts["max_windows"],
            out_dir=root / "cells" / _cell_slug(label))
        last = result.ledger.stages[-1]
        rows.append({
            "cell": label,
            "val_loss": last.val_loss,
            "val_ppl": last.val_ppl,
            "peak_simulated_bytes": result.ledger.peak_simulated_bytes,
            "total_flops": result.ledger.total_flops,
            "final_train_loss": last.final_train_loss,
        })
        print(f"[{args.axis}] {label}: val_ppl={last.val_ppl:.4f} "
              f"peak_bytes={result.ledger.peak_simulated_bytes}")

    root.mkdir(parents=True, exist_ok=True)
    (root / "results.json").write_text(json.dumps(
        {"axis": args.axis, "cells": rows}, indent=2, sort_keys=True) + "\n")
    with open(root / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["cell", "val_loss", "val_ppl",
                                                "peak_simulated_bytes",
                                                "total_flops",
                                                "final_train_loss"])
        writer.writeheader()
        writer.writerows(rows)

    width = max(len(r["cell"]) for r in rows)
    print(f"{'cell'.ljust(width)}  {'val_ppl':>10}  {'peak_bytes':>14}")
    for r in rows:
        print(f"{r['cell'].ljust(width)}  {r['val_ppl']:>10.4f}  "
              f"{r['peak_simulated_bytes']:>14}")
    print(f"results written to {root}/")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagegrow",
        description="Plan and run staged decoder training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="solve a stage plan and report memory")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--stages", type=int, required=True)
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--mode", choices=["exact", "rounded"], default="exact")
    p.add_argument("--embedding-params", type=int, default=0)
    p.add_argument("--gpu-budget-bytes", type=float, default=None)
    p.add_argument("--flops-budget", type=float, default=None)
    p.add_argument("--batch-tokens", type=int, default=None)
    p.add_argument("--growth-fraction", type=float, default=0.75)
    p.add_argument("--out", default="plan_out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("train", help="run a staged training from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", default=None,
                   help="override the config's run_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--validation-fraction", type=float, default=None)
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-windows", type=int, default=None)
    p.add_argument("--out", default="eval_report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation axis from a config file")
    p.add_argument("--axis", choices=sorted(ABLATION_CELLS), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PlanInfeasibleError, BudgetError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, data_lib.CorpusError, ckpt.CheckpointError,
            GrowthError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
