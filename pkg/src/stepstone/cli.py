"""Command-line entry point.

Subcommands: filter, train-soar, train-baseline, eval-student,
sample-teacher, report. Global flags select the config file, seed
override, output directory, budget profile, and backend.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from stepstone.config import BACKENDS, PROFILES, RunConfig, apply_profile
from stepstone.errors import ConfigurationError, ResampleBudgetError
from stepstone.harness import (
    ARMS,
    cmd_eval_student,
    cmd_filter,
    cmd_sample_teacher,
    cmd_train_baseline,
    cmd_train_soar,
    load_synthetic_dataset,
)
from stepstone.reporting import cmd_report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepstone",
        description="Teacher-student curriculum RL simulator",
    )
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="restrict to one teacher seed")
    parser.add_argument("--out", type=Path, help="output directory override")
    parser.add_argument("--profile", choices=PROFILES, help="budget preset")
    parser.add_argument("--backend", choices=BACKENDS, default="toy")
    parser.add_argument(
        "--bridge-cmd",
        help="worker command line for --backend bridge (e.g. 'python -m worker')",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("filter", help="build and split the hard task pool")

    train = sub.add_parser("train-soar", help="grounded teacher training runs")
    train.add_argument("--resume", action="store_true", help="continue from checkpoint")

    baseline = sub.add_parser("train-baseline", help="baseline arms")
    baseline.add_argument("--arm", choices=ARMS, required=True)

    evaluate = sub.add_parser("eval-student", help="fresh-student evaluation runs")
    evaluate.add_argument("--source", choices=("pq", "sampled", "none"), required=True)
    evaluate.add_argument("--strategy", choices=("curriculum", "mixed"), required=True)

    sampler = sub.add_parser("sample-teacher", help="sample pairs from a teacher")
    sampler.add_argument("--count", type=int, default=128)
    sampler.add_argument("--checkpoint-step", type=int, default=None)

    sub.add_parser("report", help="aggregate artifacts into tables")
    return parser


def resolve_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.profile:
        config = apply_profile(config, args.profile)
    if args.out:
        config = replace(config, output_dir=str(args.out))
    return config


def teacher_seeds(config: RunConfig, args) -> list[int]:
    if args.seed is not None:
        return [args.seed]
    return list(config.seeds.teacher)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        if args.command == "filter":
            split = cmd_filter(config)
            print(
                f"filtered pool: {len(split.train)} train / {len(split.test)} test "
                f"tasks -> {config.output_dir}/split.json"
            )
        elif args.command == "train-soar":
            for ts in teacher_seeds(config, args):
                result = cmd_train_soar(config, ts, resume=args.resume)
                print(
                    f"teacher seed {ts}: {result.ledger.stage} promotions over "
                    f"{len(result.ledger.reward_window)} steps"
                )
        elif args.command == "train-baseline":
            if args.backend == "bridge":
                raise ConfigurationError(
                    "the bridge backend only supports sample-teacher"
                )
            if args.arm == "hard-only":
                for ts in teacher_seeds(config, args):
                    for ss in config.seeds.student:
                        result = cmd_train_baseline(config, args.arm, ts, ss)
                        print(
                            f"hard-only t{ts}-s{ss}: "
                            f"final test greedy {result.final_test_greedy:.4f}"
                        )
            else:
                for ts in teacher_seeds(config, args):
                    cmd_train_baseline(config, args.arm, ts)
                    print(f"{args.arm} t{ts}: done")
        elif args.command == "eval-student":
            if args.backend == "bridge":
                raise ConfigurationError(
                    "the bridge backend only supports sample-teacher"
                )
            completed = 0
            for ts in teacher_seeds(config, args):
                try:
                    load_synthetic_dataset(config, args.source, ts)
                except ConfigurationError as exc:
                    print(f"skipping teacher seed {ts}: {exc}", file=sys.stderr)
                    continue
                for ss in config.seeds.student:
                    result = cmd_eval_student(
                        config, args.source, args.strategy, ts, ss
                    )
                    completed += 1
                    reported = result.reported_pass_k.get(32)
                    print(
                        f"eval {args.source}-{args.strategy} t{ts}-s{ss}: "
                        f"pass@32 {reported:.4f} (early stop {result.early_stop})"
                    )
            if completed == 0:
                raise ConfigurationError(
                    f"no usable {args.source} dataset for any requested teacher seed"
                )
        elif args.command == "sample-teacher":
            if args.backend == "bridge":
                from stepstone.bridge_client import sample_via_bridge

                if not args.bridge_cmd:
                    raise ConfigurationError(
                        "--backend bridge requires --bridge-cmd"
                    )
                for ts in teacher_seeds(config, args):
                    pairs = sample_via_bridge(
                        config, args.bridge_cmd, ts, args.count
                    )
                    print(f"bridge sample t{ts}: {len(pairs)} well-formed pairs")
            else:
                for ts in teacher_seeds(config, args):
                    pairs = cmd_sample_teacher(
                        config, ts, args.count, args.checkpoint_step
                    )
                    print(f"sampled {len(pairs)} pairs from teacher seed {ts}")
        elif args.command == "report":
            tables = cmd_report(config)
            print(f"report written to {tables['report_dir']}")
            for arm, per_k in sorted(tables["pass_k_medians"].items()):
                summary = " ".join(f"@{k}={v:.3f}" for k, v in sorted(per_k.items()))
                print(f"  {arm}: {summary}")
    except (ConfigurationError, ResampleBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
