"""Teacher-side orchestration of one training run.

Each outer step: generate g*n well-formed pairs, partition them in
generation order into g candidate datasets, train r student clones per
dataset, reward each dataset by the mean greedy-accuracy gain over the
shared baseline, maybe promote the baseline, then update the teacher
with a leave-one-out gradient where each dataset is one arm.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from stepstone.env import (
    EnvProfile,
    GeneratedPair,
    QAPair,
    StudentState,
    Task,
    distractor_answer,
    embed,
    greedy_accuracy,
    level_histogram,
    student_success_prob,
    teacher_generate,
)
from stepstone.errors import ContractViolation, ResampleBudgetError
from stepstone.inner import BaselineAccuracyCache, InnerLoopConfig, rl_update_student
from stepstone.metrics import (
    MetricSeries,
    pairwise_cosine_diversity,
    vendi_score,
    windowed_mean,
)
from stepstone.policies import (
    CategoricalPolicy,
    OptimizerState,
    apply_update,
    kl_to_reference,
    score_gradient,
)
from stepstone.records import StepReport
from stepstone.seeding import (
    STREAM_INNER,
    STREAM_LEARNABILITY,
    STREAM_REWARD_QUESTIONS,
    STREAM_TEACHER_GEN,
    derive_rng,
)


@dataclass(frozen=True)
class OuterLoopConfig:
    group_size: int = 4
    dataset_size: int = 64
    repeats: int = 4
    reward_question_count: int = 64
    tau: float = 0.01
    window: int = 3
    window_kind: str = "sliding"  # or "ema"
    reset_window_on_promotion: bool = False
    max_steps: int = 200
    teacher_batch_size: int = 2
    learning_rate: float = 0.08
    warmup_steps: int = 20
    kl_coeff: float = 0.001
    max_tries: int = 256

    def __post_init__(self):
        if self.group_size < 2:
            raise ContractViolation("teacher group size must be at least 2")
        if self.repeats < 1 or self.dataset_size < 1 or self.reward_question_count < 1:
            raise ContractViolation("counts must be positive")
        if self.tau <= 0:
            raise ContractViolation("promotion threshold must be positive")
        if self.window_kind not in ("sliding", "ema"):
            raise ContractViolation("window_kind must be 'sliding' or 'ema'")


@dataclass(frozen=True)
class TeacherState:
    """Level logits plus a frozen reference copy for the KL anchor."""

    logits: np.ndarray
    reference_logits: np.ndarray
    optimizer: OptimizerState
    temperature: float = 1.0

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        ref = np.asarray(self.reference_logits, dtype=np.float64)
        if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(ref))):
            raise ContractViolation("teacher logits must be finite")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "reference_logits", ref)

    @classmethod
    def fresh(cls, levels: int, cfg: OuterLoopConfig) -> "TeacherState":
        return cls(
            logits=np.zeros(levels),
            reference_logits=np.zeros(levels),
            optimizer=OptimizerState.fresh(
                dim=levels,
                base_lr=cfg.learning_rate,
                warmup_steps=cfg.warmup_steps,
                total_steps=cfg.max_steps,
            ),
        )

    def policy(self) -> CategoricalPolicy:
        return CategoricalPolicy(logits=self.logits, temperature=self.temperature)

    def reference_policy(self) -> CategoricalPolicy:
        return CategoricalPolicy(
            logits=self.reference_logits, temperature=self.temperature
        )


@dataclass(frozen=True)
class CandidateDataset:
    """One teacher arm: n well-formed pairs with sampling bookkeeping."""

    items: tuple[QAPair, ...]
    levels: tuple[int, ...]
    log_prob_sum: float
    reward: float | None = None

    def __post_init__(self):
        if not self.items:
            raise ContractViolation("candidate dataset must be nonempty")
        if any(not qa.well_formed for qa in self.items):
            raise ContractViolation("malformed pairs may not enter a dataset")
        if len(self.levels) != len(self.items):
            raise ContractViolation("levels must align with items")


@dataclass
class PromotionLedger:
    """Baseline-student history: reward window, stage, accumulated datasets."""

    baseline: StudentState
    tau: float
    window_width: int = 3
    window_kind: str = "sliding"
    reset_on_promotion: bool = False
    stage: int = 0
    reward_window: MetricSeries = field(default_factory=MetricSeries)
    ema_value: float = 0.0
    best_datasets: list[CandidateDataset] = field(default_factory=list)
    history: list[tuple[int, float]] = field(default_factory=list)
    accuracy_cache: BaselineAccuracyCache = field(default_factory=BaselineAccuracyCache)

    def observe(self, step: int, mean_reward: float) -> float:
        """Fold one step's mean reward into the moving average."""
        self.reward_window.append(step, mean_reward)
        if self.window_kind == "ema":
            alpha = 1.0 - 1.0 / self.window_width
            self.ema_value = alpha * self.ema_value + (1.0 - alpha) * mean_reward
            return self.ema_value
        return windowed_mean(self.reward_window, self.window_width)

    def window_full(self) -> bool:
        if self.window_kind == "ema":
            return True
        return len(self.reward_window) >= self.window_width

    def should_promote(self, window_value: float) -> bool:
        return self.window_full() and window_value > self.tau

    def promote(
        self, student: StudentState, dataset: CandidateDataset, step: int, reward: float
    ) -> None:
        self.baseline = student
        self.stage += 1
        self.best_datasets.append(dataset)
        self.history.append((step, reward))
        if self.reset_on_promotion:
            self.reward_window = MetricSeries()
            self.ema_value = 0.0


def select_promotion_student(
    rewards: list[float], students: list[StudentState]
) -> StudentState:
    """The student whose repeat reward is the median (lower median if even)."""
    if not students or len(rewards) != len(students):
        raise ContractViolation("rewards and students must align and be nonempty")
    order = np.argsort(np.asarray(rewards), kind="stable")
    return students[int(order[(len(rewards) - 1) // 2])]


def grounded_reward(
    dataset: CandidateDataset,
    ledger: PromotionLedger,
    reward_questions: list[Task],
    inner_cfg: InnerLoopConfig,
    stage: int,
    seeds: list[tuple[int, ...]],
) -> tuple[float, list[float], list[StudentState]]:
    """Mean greedy-accuracy gain of r independently trained clones.

    Returns (mean reward, per-repeat rewards, trained students); the
    trained students are kept because promotion later picks the median
    one of the best dataset.
    """
    if not reward_questions:
        raise ContractViolation("need at least one reward question")
    base_acc = ledger.accuracy_cache.lookup(ledger.baseline, reward_questions)
    items = list(dataset.items)
    repeat_rewards: list[float] = []
    students: list[StudentState] = []
    for seed in seeds:
        trained = rl_update_student(ledger.baseline, items, inner_cfg, stage, seed)
        acc = greedy_accuracy(trained, reward_questions)
        repeat_rewards.append(acc - base_acc)
        students.append(trained)
    return float(np.mean(repeat_rewards)), repeat_rewards, students


def learnability_from_rate(rate: float) -> float:
    """Per-item intrinsic reward: 0 for unsolvable items, else 1 - rate."""
    if not 0.0 <= rate <= 1.0:
        raise ContractViolation("success rate must lie in [0, 1]")
    return 0.0 if rate == 0.0 else 1.0 - rate


def learnability_reward(
    dataset: CandidateDataset,
    baseline: StudentState,
    samples: int = 32,
    rng: np.random.Generator | None = None,
    alphabet: int = 16,
) -> float:
    """Intrinsic reward favoring moderate difficulty.

    Per item, the success rate over ``samples`` student draws against the
    proposed key maps to 0 when unsolvable and 1 - rate otherwise; the
    dataset mean is broadcast to every rollout exactly as the grounded
    reward is.
    """
    if samples < 1:
        raise ContractViolation("need at least one sample per item")
    if rng is None:
        raise ContractViolation("an explicit generator is required")
    per_item = []
    for qa in dataset.items:
        p_truth = student_success_prob(baseline, qa.task)
        if qa.proposed_answer == qa.task.answer:
            match_prob = p_truth
        elif qa.proposed_answer == distractor_answer(qa.task, alphabet):
            match_prob = (1.0 - p_truth) * (1.0 - baseline.malformed_rate)
        else:
            match_prob = 0.0
        successes = int(rng.binomial(samples, match_prob))
        per_item.append(learnability_from_rate(successes / samples))
    return float(np.mean(per_item))


def generate_candidate_datasets(
    teacher: TeacherState,
    profile: EnvProfile,
    cfg: OuterLoopConfig,
    rng: np.random.Generator,
) -> tuple[list[CandidateDataset], int]:
    """Draw g*n pairs and partition them in generation order into g arms."""
    generated: list[GeneratedPair] = []
    retries = 0
    policy = teacher.policy()
    for _ in range(cfg.group_size * cfg.dataset_size):
        pair = teacher_generate(policy, profile, rng, max_tries=cfg.max_tries)
        generated.append(pair)
        retries += pair.tries_used - 1
    datasets = []
    for k in range(cfg.group_size):
        chunk = generated[k * cfg.dataset_size : (k + 1) * cfg.dataset_size]
        datasets.append(
            CandidateDataset(
                items=tuple(g.qa for g in chunk),
                levels=tuple(g.level for g in chunk),
                log_prob_sum=float(sum(g.log_prob for g in chunk)),
            )
        )
    return datasets, retries


def teacher_arm_gradient(
    teacher: TeacherState, datasets: list[CandidateDataset], rewards: list[float]
) -> np.ndarray:
    """Leave-one-out gradient over arms; one advantage per dataset.

    Each arm's score is the sum of its items' level score gradients
    (format-channel factors do not depend on the teacher parameters), so
    broadcasting one reward per arm matches summing item log-probs.
    """
    from stepstone.rloo import rloo_advantages

    policy = teacher.policy()
    advantages = rloo_advantages(rewards)
    grad = np.zeros(policy.size)
    for adv, dataset in zip(advantages, datasets):
        arm = np.zeros(policy.size)
        for level in dataset.levels:
            arm += score_gradient(policy, level)
        grad += adv * arm
    return grad


def update_teacher(
    teacher: TeacherState, datasets: list[CandidateDataset], rewards: list[float],
    cfg: OuterLoopConfig,
) -> TeacherState:
    ascent = teacher_arm_gradient(teacher, datasets, rewards)
    descent = -ascent
    if cfg.kl_coeff:
        _, kl_grad = kl_to_reference(teacher.policy(), teacher.reference_policy())
        descent = descent + cfg.kl_coeff * kl_grad
    new_logits, new_opt = apply_update(teacher.logits, descent, teacher.optimizer)
    return replace(teacher, logits=new_logits, optimizer=new_opt)


def diversity_snapshot(datasets: list[CandidateDataset]) -> tuple[float, float]:
    rows = np.stack(
        [embed(qa.task) for dataset in datasets for qa in dataset.items]
    )
    return vendi_score(rows), pairwise_cosine_diversity(rows)


def run_outer_step(
    teacher: TeacherState,
    ledger: PromotionLedger,
    profile: EnvProfile,
    train_tasks: list[Task],
    cfg: OuterLoopConfig,
    inner_cfg: InnerLoopConfig,
    run_seed: int,
    step: int,
    reward_mode: str = "grounded",
    allow_promotion: bool = True,
) -> tuple[TeacherState, PromotionLedger, StepReport]:
    """One full outer iteration; mutates the ledger, returns a new teacher.

    All g*r reward evaluations compare against the same pre-step
    baseline; the promotion check runs after every reward is computed
    and before the teacher update.
    """
    if not train_tasks:
        raise ContractViolation("train task pool is empty")
    gen_rng = derive_rng(run_seed, STREAM_TEACHER_GEN, step)
    try:
        datasets, retries = generate_candidate_datasets(teacher, profile, cfg, gen_rng)
    except ResampleBudgetError as exc:
        # abort the whole step atomically; no partial datasets escape
        raise ResampleBudgetError(
            f"outer step {step}: {exc}", tries_used=exc.tries_used
        ) from exc

    qr_rng = derive_rng(run_seed, STREAM_REWARD_QUESTIONS, step)
    count = min(cfg.reward_question_count, len(train_tasks))
    picks = qr_rng.choice(len(train_tasks), size=count, replace=False)
    reward_questions = [train_tasks[i] for i in picks]

    rewards: list[float] = []
    repeat_rewards: list[list[float]] = []
    trained: list[list[StudentState]] = []
    if reward_mode == "grounded":
        for k, dataset in enumerate(datasets):
            seeds = [
                (run_seed, STREAM_INNER, step, k, j) for j in range(cfg.repeats)
            ]
            mean_r, per_repeat, students = grounded_reward(
                dataset, ledger, reward_questions, inner_cfg, ledger.stage, seeds
            )
            rewards.append(mean_r)
            repeat_rewards.append(per_repeat)
            trained.append(students)
    elif reward_mode == "learnability":
        for k, dataset in enumerate(datasets):
            lrng = derive_rng(run_seed, STREAM_LEARNABILITY, step, k)
            rewards.append(
                learnability_reward(
                    dataset,
                    ledger.baseline,
                    samples=inner_cfg.group_size,
                    rng=lrng,
                    alphabet=profile.alphabet,
                )
            )
            repeat_rewards.append([rewards[-1]])
            trained.append([])
    else:
        raise ContractViolation(f"unknown reward mode {reward_mode!r}")

    window_value = ledger.observe(step, float(np.mean(rewards)))
    promoted = False
    if allow_promotion and reward_mode == "grounded" and ledger.should_promote(window_value):
        best = int(np.argmax(rewards))
        student = select_promotion_student(repeat_rewards[best], trained[best])
        ledger.promote(student, datasets[best], step, rewards[best])
        promoted = True

    new_teacher = update_teacher(teacher, datasets, rewards, cfg)

    vendi, cosine_div = diversity_snapshot(datasets)
    all_levels = [level for dataset in datasets for level in dataset.levels]
    report = StepReport(
        step=step,
        rewards=tuple(rewards),
        window_mean=float(window_value),
        promoted=promoted,
        stage=ledger.stage,
        level_hist=tuple(level_histogram(all_levels, profile.levels)),
        retries=retries,
        vendi=float(vendi),
        cosine_div=float(cosine_div),
    )
    return new_teacher, ledger, report
