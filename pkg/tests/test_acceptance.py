"""Acceptance gate: every release criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line
per criterion. The experiment fixture executes the full desk-budget
pipeline (filter, five teacher runs, the baseline grid, evaluations and
the report) exactly once per session.
"""

import itertools
import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from stepstone.config import EvalConfig, RunConfig, SeedRoster, apply_profile
from stepstone.env import EnvProfile, StudentState
from stepstone.harness import (
    cmd_eval_student,
    cmd_filter,
    cmd_sample_teacher,
    cmd_train_baseline,
    cmd_train_soar,
    soar_dir,
)
from stepstone.inner import InnerLoopConfig
from stepstone.metrics import (
    MetricSeries,
    SampleRecord,
    early_stop_step,
    pass_at_k,
    vendi_bootstrap,
    vendi_score,
)
from stepstone.outer import (
    OuterLoopConfig,
    PromotionLedger,
    learnability_from_rate,
    select_promotion_student,
)
from stepstone.policies import CategoricalPolicy, kl_to_reference, log_prob, score_gradient
from stepstone.records import read_jsonl
from stepstone.reporting import arm_dataset_embeddings, cmd_report, ps_pass_k
from stepstone.rloo import (
    AcceptPredicate,
    RolloutGroup,
    RolloutRecord,
    log_accept_mass_gradient,
    reinforce_gradient,
    rloo_advantages,
    verify_filtered_gradient_identity,
)
from stepstone.seeding import derive_rng

TEACHER_SEEDS = (0, 1, 2, 3, 4)
STUDENT_SEEDS = (0, 1)


def check(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"[acceptance] {name}: {status}{suffix}")
    assert ok, f"{name}{suffix}"


def make_group(outcomes, rewards):
    return RolloutGroup(
        records=tuple(
            RolloutRecord(outcome=o, log_prob=0.0, reward=r)
            for o, r in zip(outcomes, rewards)
        )
    )


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    """The desk-budget experiment: all arms, nested seeds, one report."""
    out = tmp_path_factory.mktemp("desk")
    config = apply_profile(RunConfig(output_dir=str(out)), "desk")
    config = replace(
        config, seeds=SeedRoster(teacher=TEACHER_SEEDS, student=STUDENT_SEEDS, split=7)
    )
    started = time.monotonic()
    cmd_filter(config)
    promotions = {}
    for ts in TEACHER_SEEDS:
        result = cmd_train_soar(config, ts)
        promotions[ts] = result.ledger.stage
    hard_only = {}
    for ts in TEACHER_SEEDS:
        for ss in STUDENT_SEEDS:
            hard_only[(ts, ss)] = cmd_train_baseline(config, "hard-only", ts, ss)
    intrinsic = cmd_train_baseline(config, "intrinsic", 0)
    cmd_train_baseline(config, "base-teacher", 0)
    cmd_sample_teacher(config, 0, count=128)
    pq_results = {}
    for ts in TEACHER_SEEDS:
        if promotions[ts] == 0:
            continue
        for ss in STUDENT_SEEDS:
            pq_results[(ts, ss)] = cmd_eval_student(config, "pq", "mixed", ts, ss)
    tables = cmd_report(config)
    elapsed = time.monotonic() - started
    return {
        "config": config,
        "out": out,
        "promotions": promotions,
        "hard_only": hard_only,
        "intrinsic": intrinsic,
        "pq_results": pq_results,
        "tables": tables,
        "elapsed": elapsed,
    }


class TestCriterion1FilteredGradientIdentity:
    def test_identity_and_reinforce_violation(self):
        started = time.monotonic()
        rng = derive_rng(1001)
        worst = 0.0
        for _ in range(100):
            size = int(rng.integers(3, 10))
            policy = CategoricalPolicy(logits=rng.normal(size=size) * 2)
            accept_size = int(rng.integers(2, size + 1))
            accept = AcceptPredicate(
                frozenset(int(i) for i in rng.choice(size, accept_size, replace=False))
            )
            members = sorted(accept.accepted)
            g = int(rng.integers(2, 8))
            outcomes = [int(members[i]) for i in rng.integers(len(members), size=g)]
            rewards = list(rng.normal(size=g) * 10)
            _, _, diff = verify_filtered_gradient_identity(
                policy, accept, make_group(outcomes, rewards)
            )
            worst = max(worst, diff)

        policy = CategoricalPolicy(logits=np.array([0.4, -0.2, 0.7, 0.0]))
        accept = AcceptPredicate(frozenset({0, 1, 2}))
        group = make_group([0, 1, 2], [1.0, 0.5, 0.0])
        correction = log_accept_mass_gradient(policy, accept)
        unfiltered = reinforce_gradient(policy, group)
        filtered = unfiltered - sum(r.reward for r in group.records) * correction
        violation = float(np.max(np.abs(filtered - unfiltered)))
        elapsed = time.monotonic() - started
        check(
            "criterion-1 filtered-gradient identity",
            worst < 1e-10 and violation > 1e-3 and elapsed < 1.0,
            f"max diff {worst:.2e}, reinforce gap {violation:.2e}, {elapsed:.2f}s",
        )


class TestCriterion2AdvantageIdentity:
    def test_sum_zero_over_random_groups(self):
        rng = derive_rng(1002)
        worst = 0.0
        for _ in range(10_000):
            g = int(rng.integers(2, 17))
            if rng.random() < 0.5:
                rewards = rng.choice([0.0, 10.0, 20.0, 120.0], size=g)
            else:
                rewards = rng.normal(size=g)
            worst = max(worst, abs(float(rloo_advantages(rewards).sum())))
        check("criterion-2 advantage identity", worst <= 1e-12, f"max |sum A| {worst:.2e}")


class TestCriterion3PassAtK:
    def test_oracle_equivalence_and_monotonicity(self):
        worst = 0.0
        for n in range(1, 11):
            for c in range(n + 1):
                outcomes = [1] * c + [0] * (n - c)
                for k in range(1, n + 1):
                    subsets = list(itertools.combinations(range(n), k))
                    oracle = sum(
                        1 for s in subsets if any(outcomes[i] for i in s)
                    ) / len(subsets)
                    worst = max(
                        worst, abs(pass_at_k(SampleRecord(0, n, c), k) - oracle)
                    )
        monotone = True
        for c in range(33):
            vals = [pass_at_k(SampleRecord(0, 32, c), k) for k in range(1, 33)]
            monotone &= all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
        for k in (1, 4, 8, 16, 32):
            vals = [pass_at_k(SampleRecord(0, 32, c), k) for c in range(33)]
            monotone &= all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
        check(
            "criterion-3 pass@k estimator",
            worst < 1e-12 and monotone,
            f"max enumeration gap {worst:.2e}",
        )


class TestCriterion4Vendi:
    def test_closed_forms(self):
        identical = np.tile(np.array([1.0, 0.0, 0.0]), (9, 1))
        ortho_ok = all(
            abs(vendi_score(np.eye(m)) - m) <= 1e-9 for m in (2, 4, 7)
        )
        two_rows = np.array([[1.0, 0.0], [0.5, math.sqrt(3) / 2]])
        expected = math.exp(-(0.75 * math.log(0.75) + 0.25 * math.log(0.25)))
        check(
            "criterion-4a vendi closed forms",
            abs(vendi_score(identical) - 1.0) <= 1e-9
            and ortho_ok
            and abs(vendi_score(two_rows) - expected) <= 1e-9,
        )

    def test_bootstrap_bounds_on_every_arm(self, experiment):
        config = experiment["config"]
        embeddings = arm_dataset_embeddings(config)
        expected_arms = {"d-train", "base-teacher-t0", "intrinsic-t0", "sampled-t0"}
        missing = expected_arms - set(embeddings)
        in_bounds = True
        details = []
        rng = derive_rng(1004)
        for arm, rows in sorted(embeddings.items()):
            mean_vs, _ = vendi_bootstrap(rows, subsample=128, iterations=100, rng=rng)
            in_bounds &= 1.0 - 1e-9 <= mean_vs <= 128.0 + 1e-9
            details.append(f"{arm}={mean_vs:.1f}")
        check(
            "criterion-4b vendi bootstrap per arm",
            in_bounds and not missing and any(a.startswith("pq-") for a in embeddings),
            "; ".join(details),
        )


class TestCriterion5GradientChecks:
    @staticmethod
    def finite_difference(fn, x, h=1e-6):
        grad = np.zeros_like(x)
        for i in range(x.size):
            up, down = x.copy(), x.copy()
            up[i] += h
            down[i] -= h
            grad[i] = (fn(up) - fn(down)) / (2 * h)
        return grad

    def test_score_and_kl_vs_finite_differences(self):
        rng = derive_rng(1005)
        worst = 0.0
        for _ in range(100):
            size = int(rng.integers(2, 8))
            logits = rng.normal(size=size) * 2
            temperature = float(rng.uniform(0.5, 2.0))
            outcome = int(rng.integers(size))
            analytic = score_gradient(
                CategoricalPolicy(logits=logits, temperature=temperature), outcome
            )
            numeric = self.finite_difference(
                lambda x: log_prob(
                    CategoricalPolicy(logits=x, temperature=temperature), outcome
                ),
                logits,
            )
            scale = max(np.max(np.abs(analytic)), 1e-8)
            worst = max(worst, float(np.max(np.abs(analytic - numeric)) / scale))
        for _ in range(100):
            size = int(rng.integers(2, 8))
            logits = rng.normal(size=size)
            reference = CategoricalPolicy(logits=rng.normal(size=size))
            _, analytic = kl_to_reference(CategoricalPolicy(logits=logits), reference)
            numeric = self.finite_difference(
                lambda x: kl_to_reference(CategoricalPolicy(logits=x), reference)[0],
                logits,
            )
            scale = max(np.max(np.abs(analytic)), 1e-8)
            worst = max(worst, float(np.max(np.abs(analytic - numeric)) / scale))
        check(
            "criterion-5 gradient finite-difference checks",
            worst < 1e-5,
            f"worst relative error {worst:.2e}",
        )


class TestCriterion6PromotionMechanics:
    def test_scripted_window_and_median_selection(self):
        profile = EnvProfile.default()

        def fire_step(sequence, tau=0.01):
            ledger = PromotionLedger(
                baseline=StudentState.fresh(profile), tau=tau, window_width=3
            )
            for step, reward in enumerate(sequence):
                if ledger.should_promote(ledger.observe(step, reward)):
                    return step
            return None

        scripted_ok = (
            fire_step([0.0, 0.03, 0.03]) == 2
            and fire_step([0.0, 0.0, 0.0, 0.05, 0.0]) == 3
            and fire_step([0.009, 0.009, 0.009]) is None
            and fire_step([1.0, 1.0, 1.0], tau=float("inf")) is None
        )

        def students(n):
            out = []
            for i in range(n):
                s = StudentState.fresh(profile).clone()
                s.skills[0] = float(i)
                out.append(s)
            return out

        one = students(1)
        three = students(3)
        four = students(4)
        median_ok = (
            select_promotion_student([0.5], one) is one[0]
            and select_promotion_student([0.01, 0.03, 0.02], three) is three[2]
            and select_promotion_student([0.01, 0.02, 0.03, 0.04], four) is four[1]
        )
        check(
            "criterion-6 promotion mechanics",
            scripted_ok and median_ok,
        )


class TestCriterion7EarlyStopping:
    def test_ramp_detection_and_affine_invariance(self):
        series = MetricSeries.from_pairs(
            [(t, min(1.0, t / 100.0)) for t in range(300)]
        )
        step = early_stop_step(series, smooth_window=25, slope_fraction=0.15)
        transformed = MetricSeries.from_pairs(
            [(t, 5.25 * v - 3.0) for t, v in zip(series.steps, series.values)]
        )
        step_affine = early_stop_step(transformed, smooth_window=25, slope_fraction=0.15)
        check(
            "criterion-7 early stopping",
            step is not None and 75 <= step <= 125 and step_affine == step,
            f"detected step {step}",
        )


class TestCriterion8PlateauEscape:
    def test_hard_only_plateaus_and_curriculum_escapes(self, experiment):
        promotions = experiment["promotions"]
        hard_only = experiment["hard_only"]
        pq_results = experiment["pq_results"]

        hard_greedy = float(
            np.median([r.final_test_greedy for r in hard_only.values()])
        )
        check(
            "criterion-8a hard-only greedy plateau",
            hard_greedy < 0.05,
            f"median final greedy {hard_greedy:.4f}",
        )

        seeds_with_promotion = sum(1 for v in promotions.values() if v >= 1)
        check(
            "criterion-8b promotions",
            seeds_with_promotion >= 4,
            f"promotions per seed {dict(promotions)}",
        )

        config = experiment["config"]
        ps_values = [
            ps_pass_k(config, ts, ss)[32]
            for ts in TEACHER_SEEDS
            for ss in STUDENT_SEEDS
        ]
        hard_values = [r.reported_pass_k[32] for r in hard_only.values()]
        ps_median = float(np.median(ps_values))
        hard_median = float(np.median(hard_values))
        check(
            "criterion-8c promoted-student pass@32",
            ps_median >= 2 * hard_median,
            f"promoted {ps_median:.4f} vs 2x hard-only {2 * hard_median:.4f}",
        )

        pq_values = [r.reported_pass_k[32] for r in pq_results.values()]
        pq_median = float(np.median(pq_values))
        check(
            "criterion-8d promotion-questions pass@32",
            pq_median > hard_median,
            f"pq-mixed {pq_median:.4f} vs hard-only {hard_median:.4f}",
        )

        check(
            "criterion-8e desk runtime",
            experiment["elapsed"] < 600.0,
            f"{experiment['elapsed']:.0f}s for the full experiment",
        )


class TestCriterion9Learnability:
    def test_formula_and_intrinsic_run(self, experiment):
        formula_ok = (
            learnability_from_rate(0.0) == 0.0
            and learnability_from_rate(0.25) == 0.75
            and learnability_from_rate(1.0) == 0.0
        )
        intrinsic = experiment["intrinsic"]
        config = experiment["config"]
        steps = read_jsonl(
            Path(config.output_dir) / "baseline" / "intrinsic" / "t0" / "steps.jsonl"
        )
        emitted_ok = (
            len(steps) == config.outer.max_steps
            and all("vendi" in s and "cosine_div" in s and "rewards" in s for s in steps)
        )
        check(
            "criterion-9 learnability arm",
            formula_ok and emitted_ok and len(intrinsic.reports) == config.outer.max_steps,
            f"{len(steps)} intrinsic step records",
        )


class TestCriterion10Determinism:
    def test_byte_identical_step_logs(self, tmp_path):
        def run(where: str) -> bytes:
            config = RunConfig(
                outer=OuterLoopConfig(
                    max_steps=3,
                    group_size=2,
                    dataset_size=8,
                    repeats=2,
                    reward_question_count=16,
                    warmup_steps=2,
                ),
                inner=InnerLoopConfig(steps=3, batch_size=4, group_size=8),
                evaluation=EvalConfig(max_steps=80, cadence=10, report_window=30),
                seeds=SeedRoster(teacher=(0,), student=(0,), split=7),
                output_dir=where,
            )
            cmd_filter(config)
            cmd_train_soar(config, 0)
            return (soar_dir(Path(where), 0) / "steps.jsonl").read_bytes()

        first = run(str(tmp_path / "first"))
        second = run(str(tmp_path / "second"))
        check(
            "criterion-10 determinism",
            first == second and len(first) > 0,
            f"{len(first)} bytes of step records",
        )
