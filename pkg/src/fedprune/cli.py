"""Command-line front end: run, account, coverage, selfcheck.

Run configs are flat JSON; every key shares its name with the
FederationConfig field it sets, and CLI flags override file values.
Exit codes for `run`: 1 config error, 2 coverage violation, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .federation import (
    CoverageError,
    FederationConfig,
    IdxSpec,
    SynthSpec,
    build_federated_data,
    run as run_federation,
)
from .metrics import emit_csv, emit_jsonl
from .nn import LayerLayout
from .pruning import DIGIT_SEGMENTS, codename_coverage, parse_codename
from .selfcheck import run_selfcheck
from .tables import MNIST_LAYOUT, TABLE_ROWS, check_tables, computed_row

OUT_DIR_ENV = "FEDPRUNE_OUT"

_FED_KEYS = {
    "num_clients", "participation_ratio", "rounds", "local_epochs", "local_batch",
    "learning_rate", "momentum", "codename", "family", "freeze_after_round",
    "partition", "classes_per_client", "uncovered_region_action", "hidden_layers",
    "test_batch", "loss_split", "static_slots", "smoothness_L", "init_seed",
}

_SYNTH_KEYS = {
    "synth_classes": "num_classes",
    "synth_samples_per_class": "samples_per_class",
    "synth_dim": "dim",
    "synth_spread": "spread",
    "synth_test_samples_per_class": "test_samples_per_class",
    "synth_data_seed": "data_seed",
}

_IDX_KEYS = {
    "train_images", "train_labels", "test_images", "test_labels",
    "train_subset", "test_subset", "subset_seed",
}


@dataclass(frozen=True)
class RunConfig:
    federation: FederationConfig  # seed field is replaced per run
    seeds: tuple[int, ...]
    out_dir: Path


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    raw = json.loads(Path(path).read_text())
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(raw) - _FED_KEYS - set(_SYNTH_KEYS) - _IDX_KEYS - {
        "dataset", "seed", "seeds", "out_dir",
    }
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    kind = raw.get("dataset", "synthetic")
    if kind == "synthetic":
        dataset = SynthSpec(**{v: raw[k] for k, v in _SYNTH_KEYS.items() if k in raw})
    elif kind == "idx":
        missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels")
                   if k not in raw]
        if missing:
            raise ValueError(f"idx dataset config missing keys: {missing}")
        dataset = IdxSpec(**{k: raw[k] for k in _IDX_KEYS if k in raw})
    else:
        raise ValueError(f"dataset must be 'synthetic' or 'idx', got {kind!r}")

    seeds = raw.get("seeds")
    if seeds is None:
        seeds = [raw.get("seed", 0)]
    if not seeds:
        raise ValueError("at least one seed is required")

    fed_kwargs = {k: raw[k] for k in _FED_KEYS if k in raw}
    if "hidden_layers" in fed_kwargs:
        fed_kwargs["hidden_layers"] = tuple(fed_kwargs["hidden_layers"])
    federation = FederationConfig(dataset=dataset, seed=int(seeds[0]), **fed_kwargs)

    out_dir = raw.get("out_dir") or os.environ.get(OUT_DIR_ENV, "runs")
    return RunConfig(federation, tuple(int(s) for s in seeds), Path(out_dir))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    overrides = {
        "rounds": args.rounds,
        "codename": args.codename,
        "family": args.family,
        "learning_rate": args.learning_rate,
        "momentum": args.momentum,
        "local_epochs": args.local_epochs,
        "local_batch": args.local_batch,
        "partition": args.partition,
        "uncovered_region_action": args.uncovered_region_action,
    }
    if args.seeds:
        overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.out:
        overrides["out_dir"] = args.out
    try:
        config = load_run_config(args.config, overrides)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        print(f"error: bad config {args.config}: {exc}", file=sys.stderr)
        return 1

    try:
        config.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {config.out_dir}: {exc}", file=sys.stderr)
        return 3

    final_accuracies = []
    final_losses = []
    try:
        for seed in config.seeds:
            fed = replace(config.federation, seed=int(seed))
            data = build_federated_data(fed)
            history, _ = run_federation(fed, data)
            csv_path = config.out_dir / f"metrics_seed{seed}.csv"
            jsonl_path = config.out_dir / f"metrics_seed{seed}.jsonl"
            with open(csv_path, "w") as csv_file:
                emit_csv(history, csv_file)
            with open(jsonl_path, "w") as jsonl_file:
                emit_jsonl(history, jsonl_file)
            last = history[-1] if history else None
            acc = last.global_accuracy if last else float("nan")
            loss = last.global_loss if last else float("nan")
            final_accuracies.append(acc)
            final_losses.append(loss)
            print(f"seed {seed}: rounds={len(history)} final_acc={acc:.4f} "
                  f"final_loss={loss:.4f} -> {csv_path}")
    except CoverageError as exc:
        print(f"error: coverage violation: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: dataset file not found: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return 3

    summary = {
        "codename": config.federation.codename,
        "family": config.federation.family,
        "seeds": list(config.seeds),
        "final_accuracy_per_seed": final_accuracies,
        "final_accuracy_mean": float(np.mean(final_accuracies)),
        "final_accuracy_std": float(np.std(final_accuracies)),
        "final_loss_mean": float(np.mean(final_losses)),
    }
    try:
        (config.out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    except OSError as exc:
        print(f"error: cannot write summary: {exc}", file=sys.stderr)
        return 3
    print(f"summary: mean final accuracy {summary['final_accuracy_mean']:.4f} "
          f"(std {summary['final_accuracy_std']:.4f}) over seeds {list(config.seeds)}")
    return 0


def _parse_layout(text: str) -> LayerLayout:
    return LayerLayout(tuple(int(p) for p in text.split(",")))


def cmd_account(args) -> int:
    layout = _parse_layout(args.layout) if args.layout else MNIST_LAYOUT
    if args.check_table:
        rows = [r for r in TABLE_ROWS
                if (args.codename is None or r.codename == args.codename)
                and (r.family == args.family or args.codename is None)]
        problems = check_tables(layout) if args.codename is None else []
        if args.codename is not None:
            if not rows:
                print(f"no stored row for {args.family} {args.codename}")
                return 1
            for row in rows:
                amt, gamma = computed_row(row.family, row.codename, layout)
                if round(amt.params_mean) != row.params or round(amt.flops_mean) != row.flops:
                    problems.append(f"{row.family} {row.codename}: cost mismatch")
                if row.gamma_min is not None and gamma != row.gamma_min:
                    problems.append(f"{row.family} {row.codename}: gamma_min mismatch")
        checked = len(rows) if args.codename is not None else len(TABLE_ROWS)
        if problems:
            for p in problems:
                print(f"MISMATCH {p}")
            return 1
        print(f"table check passed: {checked} stored rows match")
        return 0

    if not args.codename:
        print("error: --codename is required unless --check-table is given", file=sys.stderr)
        return 1
    try:
        assignment = parse_codename(args.codename, family=args.family)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    from .metrics import account, amortized, full_account  # local to keep startup light

    full = full_account(layout)
    per_slot = []
    for k, policy in enumerate(assignment.per_slot_policies):
        acct = account(layout, policy)
        per_slot.append(acct)
        kept = ",".join(f"S{s}" for s in sorted(policy.kept_segments))
        print(f"slot {k}: digit {args.codename[k]} keeps {kept:<12} "
              f"params {acct.params_total:>7} flops {acct.flops_total:>7}")
    amt = amortized(per_slot, full)
    _, gamma = codename_coverage(args.codename)
    print(f"amortized: params {amt.params_mean:.0f} ({amt.params_ratio:.2f} of full) "
          f"flops {amt.flops_mean:.0f} ({amt.flops_ratio:.2f} of full)")
    print(f"gamma_min: {gamma}")
    return 0


def cmd_coverage(args) -> int:
    try:
        counts, gamma = codename_coverage(args.codename)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"codename {args.codename} ({len(args.codename)} slots)")
    for s in (1, 2, 3, 4):
        slots = [k for k, d in enumerate(args.codename) if s in DIGIT_SEGMENTS[d]]
        print(f"  S{s}: covered by {counts[s]:>2} slots {slots}")
    print(f"gamma_min: {gamma}")
    if gamma == 0:
        print("warning: some quartile is covered by no slot; training cannot update it")
    return 0


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(seed=args.seed, corrupt_gradient=args.corrupt_gradient)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedprune",
        description="Federated learning with heterogeneous pruned client models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    p_run.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or ./runs)")
    p_run.add_argument("--rounds", type=int)
    p_run.add_argument("--codename")
    p_run.add_argument("--family", choices=("WP", "NP", "FS"))
    p_run.add_argument("--learning-rate", dest="learning_rate", type=float)
    p_run.add_argument("--momentum", type=float)
    p_run.add_argument("--local-epochs", dest="local_epochs", type=int)
    p_run.add_argument("--local-batch", dest="local_batch", type=int)
    p_run.add_argument("--partition", choices=("iid", "label-skew"))
    p_run.add_argument("--uncovered-region-action", dest="uncovered_region_action",
                       choices=("warn", "error"))
    p_run.set_defaults(func=cmd_run)

    p_acc = sub.add_parser("account", help="parameter/FLOP accounting for a codename")
    p_acc.add_argument("--codename")
    p_acc.add_argument("--family", default="WP", choices=("WP", "NP", "FS"))
    p_acc.add_argument("--layout", help="comma-separated layer sizes, default 784,200,10")
    p_acc.add_argument("--check-table", dest="check_table", action="store_true",
                       help="verify against the embedded benchmark grid")
    p_acc.set_defaults(func=cmd_account)

    p_cov = sub.add_parser("coverage", help="per-quartile coverage for a codename")
    p_cov.add_argument("--codename", required=True)
    p_cov.set_defaults(func=cmd_coverage)

    p_check = sub.add_parser("selfcheck", help="randomized numerical self-checks")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--corrupt-gradient", dest="corrupt_gradient", action="store_true",
                         help=argparse.SUPPRESS)  # fault-injection hook for tests
    p_check.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
