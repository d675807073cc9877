"""Experiment arms and run orchestration.

Every run writes append-only JSONL step records plus a rolling
checkpoint, so a crash loses at most one step and any run can be
resumed or byte-identically reproduced from its config and seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from stepstone.config import EvalConfig, RunConfig
from stepstone.env import (
    EnvProfile,
    QAPair,
    StudentState,
    Task,
    greedy_accuracy,
    make_task_pool,
    student_success_prob,
    teacher_generate,
    fail_at_k_sampler,
)
from stepstone.errors import ConfigurationError, ContractViolation
from stepstone.inner import InnerLoopConfig, policy_gradient_step
from stepstone.metrics import (
    MetricSeries,
    SampleRecord,
    early_stop_step,
    fail_at_k_filter,
    pass_at_k,
)
from stepstone.outer import (
    CandidateDataset,
    OuterLoopConfig,
    PromotionLedger,
    TeacherState,
    run_outer_step,
)
from stepstone.policies import OptimizerState, apply_update
from stepstone.records import (
    StepReport,
    TaskSetSplit,
    append_jsonl,
    atomic_write_json,
    qa_from_dict,
    qa_to_dict,
    read_json,
    read_jsonl,
    task_from_dict,
    task_to_dict,
    write_jsonl,
)
from stepstone.seeding import (
    STREAM_EVAL,
    STREAM_FILTER,
    STREAM_POOL,
    STREAM_SAMPLE,
    STREAM_SPLIT,
    STREAM_STUDENT_TRAIN,
    derive_rng,
)

ARMS = ("hard-only", "intrinsic", "base-teacher")


# ---------------------------------------------------------------------------
# Artifact paths


def split_path(out: Path) -> Path:
    return out / "split.json"


def soar_dir(out: Path, teacher_seed: int) -> Path:
    return out / "soar" / f"t{teacher_seed}"


def baseline_dir(out: Path, arm: str, seed_label: str) -> Path:
    return out / "baseline" / arm.replace("-", "_") / seed_label


def eval_dir(out: Path, source: str, strategy: str, ts: int, ss: int) -> Path:
    return out / "eval" / f"{source}-{strategy}" / f"t{ts}-s{ss}"


def sample_path(out: Path, teacher_seed: int) -> Path:
    return out / "samples" / f"t{teacher_seed}.json"


# ---------------------------------------------------------------------------
# filter: build the hard pool and split it


def cmd_filter(config: RunConfig) -> TaskSetSplit:
    """Generate the task pool, keep 0-of-k tasks, split 50-50, persist."""
    out = Path(config.output_dir)
    profile = config.env
    seed = config.seeds.split
    pool = make_task_pool(profile, derive_rng(seed, STREAM_POOL))
    student = StudentState.fresh(profile)
    survivors = fail_at_k_filter(
        pool,
        fail_at_k_sampler(student),
        k=config.evaluation.filter_k,
        rng=derive_rng(seed, STREAM_FILTER),
    )
    if not survivors:
        raise ConfigurationError(
            "filtering removed every task; raise the difficulty offsets or "
            "add harder levels to pool_counts"
        )
    order = derive_rng(seed, STREAM_SPLIT).permutation(len(survivors))
    half = len(survivors) // 2
    train = tuple(survivors[i] for i in order[:half])
    test = tuple(survivors[i] for i in order[half:])
    split = TaskSetSplit(train=train, test=test)
    atomic_write_json(
        split_path(out),
        {
            "config_hash": config.hash(),
            "seed": seed,
            "filter_k": config.evaluation.filter_k,
            "train": [task_to_dict(t) for t in split.train],
            "test": [task_to_dict(t) for t in split.test],
        },
    )
    return split


def load_split(config: RunConfig) -> TaskSetSplit:
    path = split_path(Path(config.output_dir))
    if not path.exists():
        raise ConfigurationError(f"missing split at {path}; run the filter command")
    data = read_json(path)
    return TaskSetSplit(
        train=tuple(task_from_dict(t) for t in data["train"]),
        test=tuple(task_from_dict(t) for t in data["test"]),
    )


# ---------------------------------------------------------------------------
# Teacher / ledger (de)serialization for checkpoints


def optimizer_to_dict(opt: OptimizerState) -> dict:
    return {
        "step": opt.step,
        "first_moment": [float(x) for x in opt.first_moment],
        "second_moment": [float(x) for x in opt.second_moment],
        "base_lr": opt.base_lr,
        "warmup_steps": opt.warmup_steps,
        "total_steps": opt.total_steps,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "eps": opt.eps,
        "weight_decay": opt.weight_decay,
    }


def optimizer_from_dict(data: dict) -> OptimizerState:
    return OptimizerState(
        step=int(data["step"]),
        first_moment=np.array(data["first_moment"], dtype=np.float64),
        second_moment=np.array(data["second_moment"], dtype=np.float64),
        base_lr=float(data["base_lr"]),
        warmup_steps=int(data["warmup_steps"]),
        total_steps=int(data["total_steps"]),
        beta1=float(data["beta1"]),
        beta2=float(data["beta2"]),
        eps=float(data["eps"]),
        weight_decay=float(data["weight_decay"]),
    )


def teacher_to_dict(teacher: TeacherState) -> dict:
    return {
        "logits": [float(x) for x in teacher.logits],
        "reference_logits": [float(x) for x in teacher.reference_logits],
        "optimizer": optimizer_to_dict(teacher.optimizer),
        "temperature": teacher.temperature,
    }


def teacher_from_dict(data: dict) -> TeacherState:
    return TeacherState(
        logits=np.array(data["logits"], dtype=np.float64),
        reference_logits=np.array(data["reference_logits"], dtype=np.float64),
        optimizer=optimizer_from_dict(data["optimizer"]),
        temperature=float(data["temperature"]),
    )


def student_to_dict(student: StudentState) -> dict:
    return {"skills": [float(x) for x in student.skills]}


def student_from_dict(data: dict, profile: EnvProfile) -> StudentState:
    base = StudentState.fresh(profile)
    return replace(base, skills=np.array(data["skills"], dtype=np.float64))


def dataset_to_dict(dataset: CandidateDataset) -> dict:
    return {
        "items": [qa_to_dict(qa) for qa in dataset.items],
        "levels": list(dataset.levels),
        "log_prob_sum": dataset.log_prob_sum,
    }


def dataset_from_dict(data: dict) -> CandidateDataset:
    return CandidateDataset(
        items=tuple(qa_from_dict(d) for d in data["items"]),
        levels=tuple(int(v) for v in data["levels"]),
        log_prob_sum=float(data["log_prob_sum"]),
    )


def ledger_to_dict(ledger: PromotionLedger) -> dict:
    return {
        "baseline": student_to_dict(ledger.baseline),
        "tau": ledger.tau,
        "window_width": ledger.window_width,
        "window_kind": ledger.window_kind,
        "reset_on_promotion": ledger.reset_on_promotion,
        "stage": ledger.stage,
        "window_steps": list(ledger.reward_window.steps),
        "window_values": list(ledger.reward_window.values),
        "ema_value": ledger.ema_value,
        "best_datasets": [dataset_to_dict(d) for d in ledger.best_datasets],
        "history": [[int(s), float(r)] for s, r in ledger.history],
    }


def ledger_from_dict(data: dict, profile: EnvProfile) -> PromotionLedger:
    window = MetricSeries.from_pairs(
        list(zip(data["window_steps"], data["window_values"]))
    )
    return PromotionLedger(
        baseline=student_from_dict(data["baseline"], profile),
        tau=float(data["tau"]),
        window_width=int(data["window_width"]),
        window_kind=data["window_kind"],
        reset_on_promotion=bool(data["reset_on_promotion"]),
        stage=int(data["stage"]),
        reward_window=window,
        ema_value=float(data["ema_value"]),
        best_datasets=[dataset_from_dict(d) for d in data["best_datasets"]],
        history=[(int(s), float(r)) for s, r in data["history"]],
    )


def fresh_ledger(config: RunConfig) -> PromotionLedger:
    return PromotionLedger(
        baseline=StudentState.fresh(config.env),
        tau=config.outer.tau,
        window_width=config.outer.window,
        window_kind=config.outer.window_kind,
        reset_on_promotion=config.outer.reset_window_on_promotion,
    )


# ---------------------------------------------------------------------------
# Teacher training runs (grounded and intrinsic)


@dataclass
class TeacherRunResult:
    teacher: TeacherState
    ledger: PromotionLedger
    reports: list[StepReport]


def run_teacher_training(
    config: RunConfig,
    teacher_seed: int,
    run_dir: Path,
    reward_mode: str = "grounded",
    allow_promotion: bool = True,
    resume: bool = False,
) -> TeacherRunResult:
    """Run the outer loop to budget, flushing one record per step."""
    profile = config.env
    split = load_split(config)
    steps_file = run_dir / "steps.jsonl"
    checkpoint_file = run_dir / "checkpoint.json"

    start = 0
    if resume and checkpoint_file.exists():
        state = read_json(checkpoint_file)
        if state["config_hash"] != config.hash():
            raise ConfigurationError("checkpoint belongs to a different config")
        teacher = teacher_from_dict(state["teacher"])
        ledger = ledger_from_dict(state["ledger"], profile)
        start = int(state["steps_completed"])
        existing = read_jsonl(steps_file) if steps_file.exists() else []
        if len(existing) != start:
            raise ConfigurationError(
                f"step log has {len(existing)} records but checkpoint says {start}"
            )
    else:
        run_dir.mkdir(parents=True, exist_ok=True)
        if steps_file.exists():
            steps_file.unlink()
        teacher = TeacherState.fresh(profile.levels, config.outer)
        ledger = fresh_ledger(config)

    reports: list[StepReport] = []
    for step in range(start, config.outer.max_steps):
        teacher, ledger, report = run_outer_step(
            teacher,
            ledger,
            profile,
            list(split.train),
            config.outer,
            config.inner,
            run_seed=teacher_seed,
            step=step,
            reward_mode=reward_mode,
            allow_promotion=allow_promotion,
        )
        reports.append(report)
        append_jsonl(steps_file, report.to_json_line())
        checkpoint = {
            "config_hash": config.hash(),
            "teacher_seed": teacher_seed,
            "steps_completed": step + 1,
            "teacher": teacher_to_dict(teacher),
            "ledger": ledger_to_dict(ledger),
        }
        atomic_write_json(checkpoint_file, checkpoint)
        atomic_write_json(run_dir / "checkpoints" / f"step-{step}.json", checkpoint)
    return TeacherRunResult(teacher=teacher, ledger=ledger, reports=reports)


def cmd_train_soar(
    config: RunConfig, teacher_seed: int, resume: bool = False
) -> TeacherRunResult:
    """Grounded teacher training; persists the promotion questions and student."""
    run_dir = soar_dir(Path(config.output_dir), teacher_seed)
    result = run_teacher_training(
        config, teacher_seed, run_dir, reward_mode="grounded", resume=resume
    )
    ledger = result.ledger
    pq_items = [qa for dataset in ledger.best_datasets for qa in dataset.items]
    atomic_write_json(
        run_dir / "pq.json",
        {
            "config_hash": config.hash(),
            "teacher_seed": teacher_seed,
            "stage": ledger.stage,
            "items": [qa_to_dict(qa) for qa in pq_items],
        },
    )
    atomic_write_json(
        run_dir / "ps.json",
        {
            "config_hash": config.hash(),
            "teacher_seed": teacher_seed,
            "stage": ledger.stage,
            "promotions": [[s, r] for s, r in ledger.history],
            "student": student_to_dict(ledger.baseline),
        },
    )
    return result


# ---------------------------------------------------------------------------
# Fresh-student training engine (evaluation and the hard-only arm)


@dataclass
class StudentTrainResult:
    student: StudentState
    train_rewards: MetricSeries
    pass_k: dict[int, MetricSeries]
    early_stop: int | None
    reported_pass_k: dict[int, float]
    final_train_greedy: float
    final_test_greedy: float


def real_pairs(tasks) -> list[QAPair]:
    return [QAPair(task=t, proposed_answer=t.answer) for t in tasks]


def evaluate_pass_k(
    student: StudentState,
    tasks,
    k_list,
    samples: int,
    rng: np.random.Generator,
) -> dict[int, float]:
    """Empirical pass@k over `samples` head draws per task."""
    per_k = {k: 0.0 for k in k_list}
    for task in tasks:
        c = int(rng.binomial(samples, student_success_prob(student, task)))
        record = SampleRecord(task_id=task.id, n=samples, c=c)
        for k in k_list:
            per_k[k] += pass_at_k(record, k)
    return {k: v / len(tasks) for k, v in per_k.items()}


def run_student_training(
    profile: EnvProfile,
    synthetic: list[QAPair],
    train_tasks,
    test_tasks,
    strategy: str,
    eval_cfg: EvalConfig,
    seed_path: tuple[int, ...],
) -> StudentTrainResult:
    """Train a fresh student per the mixing strategy and record its metrics.

    curriculum: synthetic-only batches for the warmup steps, real-only
    after. mixed: uniform batches over the concatenation throughout.
    With no synthetic items both reduce to real-only training.
    """
    real = real_pairs(train_tasks)
    if not real:
        raise ConfigurationError("student training needs a nonempty real task set")
    union = synthetic + real
    step_cfg = InnerLoopConfig(
        steps=1,
        batch_size=eval_cfg.batch_size,
        group_size=eval_cfg.group_size,
        learning_rate=eval_cfg.learning_rate,
        kl_coeff=eval_cfg.kl_coeff,
        alphabet=profile.alphabet,
        mention_rate=profile.mention_rate,
    )
    student = StudentState.fresh(profile)
    reference = student.clone()
    skills = student.skills.copy()
    opt = OptimizerState.fresh(
        dim=skills.size,
        base_lr=eval_cfg.learning_rate,
        warmup_steps=eval_cfg.warmup_steps,
        total_steps=eval_cfg.max_steps,
    )
    rng = derive_rng(*seed_path, STREAM_STUDENT_TRAIN)
    train_rewards = MetricSeries()
    pass_series: dict[int, MetricSeries] = {k: MetricSeries() for k in eval_cfg.k_list}

    for step in range(eval_cfg.max_steps):
        if strategy == "curriculum":
            stream = (
                synthetic
                if synthetic and step < eval_cfg.synthetic_warmup_steps
                else real
            )
        elif strategy == "mixed":
            stream = union if synthetic else real
        else:
            raise ConfigurationError(f"unknown mixing strategy {strategy!r}")
        idx = rng.integers(0, len(stream), size=eval_cfg.batch_size)
        batch = [stream[i] for i in idx]
        current = replace(student, skills=skills)
        descent, mean_reward = policy_gradient_step(
            current, reference, batch, step_cfg, rng
        )
        skills, opt = apply_update(skills, descent, opt)
        train_rewards.append(step, mean_reward)
        if (step + 1) % eval_cfg.cadence == 0 and test_tasks:
            eval_rng = derive_rng(*seed_path, STREAM_EVAL, step)
            current = replace(student, skills=skills)
            snapshot = evaluate_pass_k(
                current, test_tasks, eval_cfg.k_list, eval_cfg.pass_k_samples, eval_rng
            )
            for k, value in snapshot.items():
                pass_series[k].append(step, value)

    final = replace(student, skills=skills, optimizer=opt)
    stop = early_stop_step(
        train_rewards, eval_cfg.early_stop_window, eval_cfg.early_stop_fraction
    )
    reported = {}
    window_start = stop if stop is not None else eval_cfg.max_steps - eval_cfg.report_window
    for k, series in pass_series.items():
        points = [
            v
            for s, v in zip(series.steps, series.values)
            if window_start < s <= window_start + eval_cfg.report_window
        ]
        if not points and len(series) > 0:
            points = [series.values[-1]]
        reported[k] = float(np.mean(points)) if points else 0.0
    return StudentTrainResult(
        student=final,
        train_rewards=train_rewards,
        pass_k=pass_series,
        early_stop=stop,
        reported_pass_k=reported,
        final_train_greedy=greedy_accuracy(final, list(train_tasks)),
        final_test_greedy=greedy_accuracy(final, list(test_tasks)) if test_tasks else 0.0,
    )


def persist_student_run(
    run_dir: Path, config: RunConfig, result: StudentTrainResult, meta: dict
) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        run_dir / "train_rewards.jsonl",
        (
            json.dumps({"step": step, "reward": value})
            for step, value in zip(result.train_rewards.steps, result.train_rewards.values)
        ),
    )
    write_jsonl(
        run_dir / "passk.jsonl",
        (
            json.dumps({"k": k, "step": step, "value": value})
            for k, series in sorted(result.pass_k.items())
            for step, value in zip(series.steps, series.values)
        ),
    )
    summary = {
        "config_hash": config.hash(),
        **meta,
        "early_stop": result.early_stop,
        "reported_pass_k": {str(k): v for k, v in result.reported_pass_k.items()},
        "final_train_greedy": result.final_train_greedy,
        "final_test_greedy": result.final_test_greedy,
        "student": student_to_dict(result.student),
    }
    atomic_write_json(run_dir / "summary.json", summary)


def load_synthetic_dataset(config: RunConfig, source: str, teacher_seed: int) -> list[QAPair]:
    out = Path(config.output_dir)
    if source == "none":
        return []
    if source == "pq":
        path = soar_dir(out, teacher_seed) / "pq.json"
        if not path.exists():
            raise ConfigurationError(f"missing {path}; run train-soar first")
        data = read_json(path)
        items = [qa_from_dict(d) for d in data["items"]]
        if not items:
            raise ConfigurationError(
                f"teacher seed {teacher_seed} reached no promotions; no PQ dataset"
            )
        return items
    if source == "sampled":
        path = sample_path(out, teacher_seed)
        if not path.exists():
            raise ConfigurationError(f"missing {path}; run sample-teacher first")
        return [qa_from_dict(d) for d in read_json(path)["items"]]
    raise ConfigurationError(f"unknown dataset source {source!r}")


def cmd_eval_student(
    config: RunConfig,
    source: str,
    strategy: str,
    teacher_seed: int,
    student_seed: int,
) -> StudentTrainResult:
    split = load_split(config)
    synthetic = load_synthetic_dataset(config, source, teacher_seed)
    eval_cfg = replace(config.evaluation, strategy=strategy)
    result = run_student_training(
        config.env,
        synthetic,
        list(split.train),
        list(split.test),
        strategy,
        eval_cfg,
        seed_path=(teacher_seed, student_seed),
    )
    run_dir = eval_dir(Path(config.output_dir), source, strategy, teacher_seed, student_seed)
    persist_student_run(
        run_dir,
        config,
        result,
        {
            "arm": f"{source}-{strategy}",
            "teacher_seed": teacher_seed,
            "student_seed": student_seed,
            "synthetic_items": len(synthetic),
        },
    )
    return result


def sample_teacher_pairs(
    teacher: TeacherState, profile: EnvProfile, count: int, rng
) -> list[QAPair]:
    return [
        teacher_generate(teacher.policy(), profile, rng).qa for _ in range(count)
    ]


def cmd_sample_teacher(
    config: RunConfig,
    teacher_seed: int,
    count: int = 128,
    checkpoint_step: int | None = None,
) -> list[QAPair]:
    """Sample well-formed pairs from a trained teacher checkpoint."""
    out = Path(config.output_dir)
    run_dir = soar_dir(out, teacher_seed)
    if checkpoint_step is None:
        path = run_dir / "checkpoint.json"
    else:
        path = run_dir / "checkpoints" / f"step-{checkpoint_step}.json"
    if not path.exists():
        raise ConfigurationError(f"missing teacher checkpoint {path}")
    teacher = teacher_from_dict(read_json(path)["teacher"])
    rng = derive_rng(teacher_seed, STREAM_SAMPLE, checkpoint_step or -1)
    pairs = sample_teacher_pairs(teacher, config.env, count, rng)
    atomic_write_json(
        sample_path(out, teacher_seed),
        {
            "config_hash": config.hash(),
            "teacher_seed": teacher_seed,
            "checkpoint_step": checkpoint_step,
            "items": [qa_to_dict(qa) for qa in pairs],
        },
    )
    return pairs


def cmd_train_baseline(config: RunConfig, arm: str, seed: int, student_seed: int | None = None):
    """Baseline arms: direct hard training, intrinsic teacher, base sampling."""
    out = Path(config.output_dir)
    if arm == "hard-only":
        split = load_split(config)
        ss = 0 if student_seed is None else student_seed
        result = run_student_training(
            config.env,
            [],
            list(split.train),
            list(split.test),
            "curriculum",
            config.evaluation,
            seed_path=(seed, ss),
        )
        run_dir = baseline_dir(out, arm, f"t{seed}-s{ss}")
        persist_student_run(
            run_dir,
            config,
            result,
            {"arm": "hard-only", "teacher_seed": seed, "student_seed": ss},
        )
        return result
    if arm == "intrinsic":
        run_dir = baseline_dir(out, arm, f"t{seed}")
        result = run_teacher_training(
            config,
            seed,
            run_dir,
            reward_mode="learnability",
            allow_promotion=False,
        )
        rng = derive_rng(seed, STREAM_SAMPLE, -2)
        pairs = sample_teacher_pairs(result.teacher, config.env, 128, rng)
        atomic_write_json(
            run_dir / "sample.json",
            {
                "config_hash": config.hash(),
                "teacher_seed": seed,
                "items": [qa_to_dict(qa) for qa in pairs],
            },
        )
        return result
    if arm == "base-teacher":
        teacher = TeacherState.fresh(config.env.levels, config.outer)
        rng = derive_rng(seed, STREAM_SAMPLE, -3)
        pairs = sample_teacher_pairs(teacher, config.env, 128, rng)
        run_dir = baseline_dir(out, arm, f"t{seed}")
        run_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_json(
            run_dir / "sample.json",
            {
                "config_hash": config.hash(),
                "teacher_seed": seed,
                "items": [qa_to_dict(qa) for qa in pairs],
            },
        )
        return pairs
    raise ConfigurationError(f"unknown baseline arm {arm!r}; choose from {ARMS}")
