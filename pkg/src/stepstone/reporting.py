"""Aggregate run artifacts into tables and plot data.

Medians and standard deviations are taken across the nested seed grid;
diversity rows are standardized by bootstrap subsampling. Embeddings in
this environment are synthetic feature vectors, and every diversity row
carries that flag so readers do not mistake them for text embeddings.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from stepstone.config import RunConfig
from stepstone.env import embed
from stepstone.errors import ConfigurationError
from stepstone.harness import (
    baseline_dir,
    evaluate_pass_k,
    load_split,
    soar_dir,
    student_from_dict,
)
from stepstone.metrics import pairwise_cosine_diversity, vendi_bootstrap
from stepstone.records import (
    qa_from_dict,
    read_json,
    read_jsonl,
    write_csv,
    write_jsonl,
)
from stepstone.seeding import STREAM_EVAL, derive_rng

EMBEDDING_KIND = "toy-features"


def _require(path: Path, missing: list[str]) -> bool:
    if not path.exists():
        missing.append(str(path))
        return False
    return True


def ps_pass_k(
    config: RunConfig, teacher_seed: int, student_seed: int
) -> dict[int, float]:
    """Inference-only pass@k of the promoted student on the test half."""
    split = load_split(config)
    data = read_json(soar_dir(Path(config.output_dir), teacher_seed) / "ps.json")
    student = student_from_dict(data["student"], config.env)
    rng = derive_rng(teacher_seed, student_seed, STREAM_EVAL)
    return evaluate_pass_k(
        student,
        list(split.test),
        config.evaluation.k_list,
        config.evaluation.pass_k_samples,
        rng,
    )


def collect_arm_pass_k(config: RunConfig) -> tuple[dict[str, dict[int, list[float]]], list[str]]:
    """Reported pass@k values per arm, one entry per seed-grid run."""
    out = Path(config.output_dir)
    roster = config.seeds
    missing: list[str] = []
    arms: dict[str, dict[int, list[float]]] = {}

    def add(arm: str, k: int, value: float) -> None:
        arms.setdefault(arm, {}).setdefault(k, []).append(value)

    for ts in roster.teacher:
        for ss in roster.student:
            path = baseline_dir(out, "hard-only", f"t{ts}-s{ss}") / "summary.json"
            if _require(path, missing):
                summary = read_json(path)
                for k_str, value in summary["reported_pass_k"].items():
                    add("hard-only", int(k_str), value)

    for ts in roster.teacher:
        ps_file = soar_dir(out, ts) / "ps.json"
        if _require(ps_file, missing):
            for ss in roster.student:
                for k, value in ps_pass_k(config, ts, ss).items():
                    add("soar-ps", k, value)

    eval_root = out / "eval"
    if eval_root.exists():
        for arm_dir in sorted(eval_root.iterdir()):
            arm = arm_dir.name
            for run_dir in sorted(arm_dir.iterdir()):
                summary = read_json(run_dir / "summary.json")
                for k_str, value in summary["reported_pass_k"].items():
                    add(arm, int(k_str), value)
    return arms, missing


def arm_dataset_embeddings(config: RunConfig) -> dict[str, np.ndarray]:
    """Embedding matrices of each arm's question set, keyed by arm label."""
    out = Path(config.output_dir)
    split = load_split(config)
    result: dict[str, np.ndarray] = {
        "d-train": np.stack([embed(t) for t in split.train])
    }
    for ts in config.seeds.teacher:
        pq_file = soar_dir(out, ts) / "pq.json"
        if pq_file.exists():
            items = [qa_from_dict(d) for d in read_json(pq_file)["items"]]
            if items:
                result[f"pq-t{ts}"] = np.stack([embed(qa.task) for qa in items])
        for arm, filename in (
            ("base-teacher", baseline_dir(out, "base-teacher", f"t{ts}") / "sample.json"),
            ("intrinsic", baseline_dir(out, "intrinsic", f"t{ts}") / "sample.json"),
            ("sampled", out / "samples" / f"t{ts}.json"),
        ):
            if filename.exists():
                items = [qa_from_dict(d) for d in read_json(filename)["items"]]
                result[f"{arm}-t{ts}"] = np.stack([embed(qa.task) for qa in items])
    return result


def promotion_timelines(config: RunConfig) -> list[list]:
    out = Path(config.output_dir)
    rows = []
    for ts in config.seeds.teacher:
        ps_file = soar_dir(out, ts) / "ps.json"
        if ps_file.exists():
            data = read_json(ps_file)
            for stage, (step, reward) in enumerate(data["promotions"], start=1):
                rows.append([ts, stage, step, f"{reward:.6f}"])
    return rows


def cmd_report(config: RunConfig) -> dict:
    """Write CSV tables and JSONL plot data; returns the table dict."""
    out = Path(config.output_dir)
    report_dir = out / "report"
    arms, missing = collect_arm_pass_k(config)
    if missing:
        raise ConfigurationError(
            "report needs the full seed roster; missing runs:\n  " + "\n  ".join(missing)
        )

    passk_rows = []
    medians: dict[str, dict[int, float]] = {}
    for arm in sorted(arms):
        medians[arm] = {}
        for k in sorted(arms[arm]):
            values = np.asarray(arms[arm][k])
            medians[arm][k] = float(np.median(values))
            passk_rows.append(
                [arm, k, f"{np.median(values):.6f}", f"{values.std():.6f}", values.size]
            )
    write_csv(
        report_dir / "passk_table.csv",
        ["arm", "k", "median", "std", "runs"],
        passk_rows,
    )

    delta_rows = []
    base = medians.get("hard-only", {})
    for arm in sorted(medians):
        if arm == "hard-only":
            continue
        for k in sorted(medians[arm]):
            if k in base:
                delta_rows.append(
                    [arm, k, f"{medians[arm][k] - base[k]:+.6f}"]
                )
    write_csv(
        report_dir / "delta_over_hard_only.csv", ["arm", "k", "delta_median"], delta_rows
    )

    diversity_rows = []
    for arm, rows in sorted(arm_dataset_embeddings(config).items()):
        rng = derive_rng(config.seeds.split, STREAM_EVAL, len(arm))
        mean_vs, std_vs = vendi_bootstrap(rows, subsample=128, iterations=100, rng=rng)
        cos_div = pairwise_cosine_diversity(rows) if rows.shape[0] >= 2 else 0.0
        diversity_rows.append(
            [
                arm,
                rows.shape[0],
                f"{mean_vs:.4f}",
                f"{std_vs:.4f}",
                f"{cos_div:.4f}",
                EMBEDDING_KIND,
            ]
        )
    write_csv(
        report_dir / "diversity_table.csv",
        ["arm", "count", "vendi_mean", "vendi_std", "cosine_div", "embeddings"],
        diversity_rows,
    )

    write_csv(
        report_dir / "promotions.csv",
        ["teacher_seed", "stage", "step", "reward"],
        promotion_timelines(config),
    )

    plot_lines = []
    eval_root = out / "eval"
    run_dirs = []
    if eval_root.exists():
        run_dirs += [(d.parent.name, d) for a in sorted(eval_root.iterdir()) for d in sorted(a.iterdir())]
    hard_root = out / "baseline" / "hard_only"
    if hard_root.exists():
        run_dirs += [("hard-only", d) for d in sorted(hard_root.iterdir())]
    for arm, run_dir in run_dirs:
        passk_file = run_dir / "passk.jsonl"
        if passk_file.exists():
            for row in read_jsonl(passk_file):
                plot_lines.append(
                    json.dumps(
                        {
                            "arm": arm,
                            "run": run_dir.name,
                            "k": row["k"],
                            "step": row["step"],
                            "value": row["value"],
                        },
                        separators=(",", ":"),
                    )
                )
    write_jsonl(report_dir / "plotdata.jsonl", plot_lines)

    return {"pass_k_medians": medians, "report_dir": str(report_dir)}
