"""Short student training runs on one candidate dataset.

The update operates on a clone, never the baseline itself: promotion
semantics require the pre-training student to stay comparable across
every candidate dataset of an outer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stepstone.env import (
    QAPair,
    StudentState,
    answer_head,
    draw_outcomes,
    greedy_accuracy,
    head_margin_gradient,
    rollout_rewards,
    EMIT_TRUTH,
)
from stepstone.errors import ContractViolation
from stepstone.policies import OptimizerState, apply_update, kl_to_reference
from stepstone.rloo import rloo_advantages
from stepstone.seeding import derive_rng


@dataclass(frozen=True)
class InnerLoopConfig:
    steps: int = 10
    extra_steps_per_stage: int = 5
    batch_size: int = 8
    group_size: int = 32
    learning_rate: float = 0.55
    warmup_steps: int = 0
    kl_coeff: float = 0.001
    mention_rate: float = 0.1
    alphabet: int = 16

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.group_size < 2:
            raise ContractViolation("invalid inner-loop sizes")

    def total_steps(self, stage: int) -> int:
        return self.steps + self.extra_steps_per_stage * stage


def policy_gradient_step(
    student: StudentState,
    reference: StudentState,
    pairs: list[QAPair],
    cfg: InnerLoopConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Batch ascent gradient w.r.t. skills, already negated for descent.

    Per pair: a rollout group from the answer head, leave-one-out
    advantages, and the chain rule through the head's margin logit. The
    KL penalty anchors each head to the frozen reference student.
    """
    descent = np.zeros_like(student.skills)
    mean_reward = 0.0
    for qa in pairs:
        outcomes, mention_draws = draw_outcomes(
            student, qa.task, cfg.group_size, rng
        )
        rewards = rollout_rewards(
            student, qa, outcomes, mention_draws, cfg.mention_rate, cfg.alphabet
        )
        advantages = rloo_advantages(rewards)
        # d log pi(outcome) / d skills = (1{truth} - p_truth) * d margin/d skills;
        # with sum(A) = 0 the p_truth term cancels, leaving the truth-hit mass.
        coeff = float(advantages[outcomes == EMIT_TRUTH].sum())
        dmargin = head_margin_gradient(student, qa.task)
        descent -= coeff * dmargin
        if cfg.kl_coeff:
            _, kl_grad = kl_to_reference(
                answer_head(student, qa.task), answer_head(reference, qa.task)
            )
            descent += cfg.kl_coeff * kl_grad[0] * dmargin
        mean_reward += float(rewards.mean())
    return descent / len(pairs), mean_reward / len(pairs)


def rl_update_student(
    baseline: StudentState,
    dataset: list[QAPair],
    cfg: InnerLoopConfig,
    stage: int = 0,
    seed: tuple[int, ...] | int = 0,
) -> StudentState:
    """Train a clone of ``baseline`` on the dataset; the baseline is untouched.

    Runs ``steps + extra_steps_per_stage * stage`` update steps, each on a
    uniform-with-replacement batch of dataset items. Fully determined by
    (baseline, dataset, cfg, stage, seed).
    """
    if not dataset:
        raise ContractViolation("cannot train on an empty dataset")
    if any(not qa.well_formed for qa in dataset):
        raise ContractViolation("malformed pairs may not enter a training dataset")
    rng = derive_rng(*seed) if isinstance(seed, tuple) else derive_rng(int(seed))
    total = cfg.total_steps(stage)
    student = baseline.clone()
    reference = baseline.clone()
    opt = OptimizerState.fresh(
        dim=student.skills.size,
        base_lr=cfg.learning_rate,
        warmup_steps=cfg.warmup_steps,
        total_steps=total,
    )
    skills = student.skills
    for _ in range(total):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = [dataset[i] for i in idx]
        current = StudentState(
            skills=skills,
            kernel=student.kernel,
            offsets=student.offsets,
            sharpness=student.sharpness,
            malformed_rate=student.malformed_rate,
        )
        descent, _ = policy_gradient_step(current, reference, batch, cfg, rng)
        skills, opt = apply_update(skills, descent, opt)
    return StudentState(
        skills=skills,
        kernel=student.kernel,
        offsets=student.offsets,
        sharpness=student.sharpness,
        malformed_rate=student.malformed_rate,
        optimizer=opt,
    )


class BaselineAccuracyCache:
    """Memoizes greedy baseline accuracy per (student fingerprint, task ids).

    One outer step evaluates the same baseline against the same reward
    questions g*r times; this collapses those to a single evaluation.
    """

    def __init__(self):
        self._cache: dict[tuple[str, tuple[int, ...]], float] = {}

    def lookup(self, baseline: StudentState, tasks: list) -> float:
        key = (baseline.fingerprint(), tuple(t.id for t in tasks))
        if key not in self._cache:
            self._cache[key] = baseline_accuracy(baseline, tasks)
        return self._cache[key]


def baseline_accuracy(baseline: StudentState, reward_questions: list) -> float:
    """Greedy accuracy of the untrained baseline on the reward questions."""
    if not reward_questions:
        raise ContractViolation("baseline accuracy over an empty task list")
    return greedy_accuracy(baseline, reward_questions)
