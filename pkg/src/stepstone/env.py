"""Synthetic verifiable-task environment.

A ladder of difficulty levels stands in for a real problem corpus. A
student is a vector of latent per-level skills coupled through a band
kernel, so competence gained on one level bleeds into its neighbors;
that coupling is what makes stepping-stone curricula work here. A
teacher is a categorical policy over levels whose generations suffer
format failures and answer errors at level-dependent rates, and a
verifier scores emissions on a fixed reward ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from stepstone.errors import ContractViolation
from stepstone.policies import CategoricalPolicy, OptimizerState, log_prob
from stepstone.rloo import (
    DEFAULT_MAX_TRIES,
    AcceptPredicate,
    RolloutGroup,
    RolloutRecord,
    filtered_sample,
)

# Emission classes of the student's per-task answer head.
EMIT_TRUTH = 0
EMIT_DISTRACTOR = 1
EMIT_MALFORMED = 2

# Reward ladder: exact match / formatted mismatch that mentions the key /
# formatted mismatch without mention / malformed output.
REWARD_MATCH = 120.0
REWARD_MENTION = 20.0
REWARD_MISMATCH = 10.0
REWARD_MALFORMED = 0.0


@dataclass(frozen=True)
class Task:
    """One problem: a difficulty level, an embedding, and a true answer."""

    id: int
    level: int
    features: np.ndarray
    answer: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        norm = float(np.linalg.norm(features))
        if abs(norm - 1.0) > 1e-9:
            raise ContractViolation(f"feature vector norm {norm} != 1")
        object.__setattr__(self, "features", features)


@dataclass(frozen=True)
class QAPair:
    """A task together with the answer its author proposed for it."""

    task: Task
    proposed_answer: int
    well_formed: bool = True


@dataclass(frozen=True)
class Emission:
    """What one student rollout produced."""

    formatted: bool
    answer: int | None
    mentions: frozenset[int]


@dataclass(frozen=True)
class EnvProfile:
    """Environment constants: the ladder, the generation channel, features.

    offsets must be strictly increasing (higher level = harder) and
    generator_competence nonincreasing (harder levels are answered
    correctly less often). pool_counts only sizes the real-task corpus
    per level; it does not affect the ladder itself.
    """

    offsets: np.ndarray
    generator_competence: np.ndarray
    format_failure: np.ndarray
    alphabet: int = 16
    kernel_weight: float = 0.35
    kernel_bandwidth: int = 1
    mention_rate: float = 0.1
    student_malformed_rate: float = 0.05
    sharpness: float = 1.0
    feature_level_weight: float = 0.75
    feature_noise_dims: int = 8
    pool_counts: tuple[int, ...] = ()

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        q = np.asarray(self.generator_competence, dtype=np.float64)
        f = np.asarray(self.format_failure, dtype=np.float64)
        n = offsets.size
        if n < 2:
            raise ContractViolation("ladder needs at least two levels")
        if q.size != n or f.size != n:
            raise ContractViolation("per-level arrays must match the ladder size")
        if np.any(np.diff(offsets) <= 0):
            raise ContractViolation("difficulty offsets must be strictly increasing")
        if np.any((q < 0) | (q > 1)) or np.any(np.diff(q) > 1e-12):
            raise ContractViolation("generator competence must be in [0,1], nonincreasing")
        if np.any((f < 0) | (f > 1)):
            raise ContractViolation("format failure rates must be in [0,1]")
        if self.alphabet < 2:
            raise ContractViolation("answer alphabet needs at least 2 symbols")
        if not 0 < self.student_malformed_rate < 1:
            raise ContractViolation("student malformed rate must lie in (0,1)")
        if self.sharpness <= 0:
            raise ContractViolation("sharpness must be positive")
        if not 0 < self.feature_level_weight < 1:
            raise ContractViolation("feature level weight must lie in (0,1)")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "generator_competence", q)
        object.__setattr__(self, "format_failure", f)
        object.__setattr__(self, "pool_counts", tuple(int(c) for c in self.pool_counts))

    @property
    def levels(self) -> int:
        return int(self.offsets.size)

    @property
    def top_level(self) -> int:
        return self.levels - 1

    def kernel(self) -> np.ndarray:
        """Symmetric band matrix coupling neighboring skill levels."""
        n = self.levels
        k = np.eye(n)
        for d in range(1, self.kernel_bandwidth + 1):
            k += self.kernel_weight * (np.eye(n, k=d) + np.eye(n, k=-d))
        return k

    def feature_dim(self) -> int:
        return self.levels + self.feature_noise_dims

    def level_directions(self) -> np.ndarray:
        """Unit base direction per level with band overlap between neighbors."""
        base = self.kernel()
        padded = np.zeros((self.levels, self.feature_dim()))
        padded[:, : self.levels] = base
        return padded / np.linalg.norm(padded, axis=1, keepdims=True)

    @classmethod
    def default(cls) -> "EnvProfile":
        """Calibrated desk-scale ladder.

        The shape matters more than the numbers: an easy entry zone
        (levels 0-2 solvable from scratch), a finely spaced climb, and an
        ultra-hard top. Real tasks exist only at levels 6, 9 and 12-15;
        the connector levels in between can only be reached through
        generated tasks, which is what gives a curriculum its edge over
        direct training on the pool. High sharpness makes success
        probabilities collapse fast below the competence frontier, so
        sparse lucky rollouts cannot bootstrap a stuck student.
        """
        return cls(
            offsets=np.array(
                [-0.5, 0.0, 0.2, 0.7, 1.3, 1.9, 2.4, 3.4, 4.4, 5.6,
                 6.9, 8.2, 9.5, 11.0, 13.0, 14.5]
            ),
            generator_competence=np.linspace(0.95, 0.4, 16),
            format_failure=np.full(16, 0.15),
            alphabet=16,
            kernel_weight=0.45,
            kernel_bandwidth=2,
            sharpness=3.0,
            pool_counts=(0, 0, 0, 0, 0, 0, 12, 0, 0, 72, 0, 0, 96, 96, 96, 96),
        )


def distractor_answer(task: Task, alphabet: int) -> int:
    """The specific wrong answer this task's failed attempts converge on."""
    return (task.answer + 1 + task.id % (alphabet - 1)) % alphabet


def make_task_features(
    profile: EnvProfile, level: int, rng: np.random.Generator
) -> np.ndarray:
    """Unit feature vector: a level direction blended with isotropic noise.

    Same-level pairs keep cosine similarity inside (2w-1, 1) for level
    weight w, while levels further apart than the band overlap stay near
    zero, so diversity metrics respond to level concentration.
    """
    noise = rng.standard_normal(profile.feature_noise_dims)
    noise /= np.linalg.norm(noise)
    vec = math.sqrt(profile.feature_level_weight) * profile.level_directions()[level]
    vec = vec.copy()
    vec[profile.levels :] += math.sqrt(1.0 - profile.feature_level_weight) * noise
    return vec / np.linalg.norm(vec)


def make_task(
    profile: EnvProfile, task_id: int, level: int, rng: np.random.Generator
) -> Task:
    if not 0 <= level < profile.levels:
        raise ContractViolation(f"level {level} outside ladder")
    answer = int(rng.integers(profile.alphabet))
    features = make_task_features(profile, level, rng)
    return Task(id=task_id, level=level, features=features, answer=answer)


def make_task_pool(profile: EnvProfile, rng: np.random.Generator) -> list[Task]:
    """The fixed corpus of real tasks, pool_counts per level."""
    counts = profile.pool_counts or tuple([32] * profile.levels)
    if len(counts) != profile.levels:
        raise ContractViolation("pool_counts must match the ladder size")
    tasks = []
    next_id = 0
    for level, count in enumerate(counts):
        for _ in range(count):
            tasks.append(make_task(profile, next_id, level, rng))
            next_id += 1
    return tasks


@dataclass(frozen=True)
class StudentState:
    """Latent per-level skills plus the coupling that turns them into behavior.

    Effective competence is kernel @ skills; the head for a level-d task
    succeeds with probability sigmoid(sharpness * (competence_d - offset_d)).
    """

    skills: np.ndarray
    kernel: np.ndarray
    offsets: np.ndarray
    sharpness: float = 1.0
    malformed_rate: float = 0.05
    optimizer: OptimizerState | None = None

    def __post_init__(self):
        skills = np.asarray(self.skills, dtype=np.float64)
        if skills.ndim != 1 or skills.size != self.offsets.size:
            raise ContractViolation("skills must match the ladder size")
        if self.kernel.shape != (skills.size, skills.size):
            raise ContractViolation("kernel shape must match the ladder size")
        if np.any(self.kernel < 0):
            raise ContractViolation("kernel entries must be nonnegative")
        if not 0 < self.malformed_rate < 1:
            raise ContractViolation("malformed rate must lie in (0,1)")
        object.__setattr__(self, "skills", skills)

    @classmethod
    def fresh(cls, profile: EnvProfile) -> "StudentState":
        return cls(
            skills=np.zeros(profile.levels),
            kernel=profile.kernel(),
            offsets=np.asarray(profile.offsets, dtype=np.float64),
            sharpness=profile.sharpness,
            malformed_rate=profile.student_malformed_rate,
        )

    def clone(self) -> "StudentState":
        return replace(self, skills=self.skills.copy())

    def competence(self) -> np.ndarray:
        return self.kernel @ self.skills

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.skills).tobytes()).hexdigest()


def task_margin(student: StudentState, task: Task) -> float:
    if not 0 <= task.level < student.skills.size:
        raise ContractViolation(f"task level {task.level} outside ladder")
    comp = float(student.kernel[task.level] @ student.skills)
    return student.sharpness * (comp - float(student.offsets[task.level]))


def student_success_prob(student: StudentState, task: Task) -> float:
    """P(emit the true answer) = sigmoid of the competence margin, in (0,1)."""
    margin = task_margin(student, task)
    if margin >= 0:
        p = 1.0 / (1.0 + math.exp(-margin))
    else:
        e = math.exp(margin)
        p = e / (1.0 + e)
    return min(max(p, 1e-300), 1.0 - 1e-12)


def answer_head(student: StudentState, task: Task) -> CategoricalPolicy:
    """The student's three-way emission head for one task.

    Logits [margin, ln(1-m), ln(m)] make P(truth) exactly the sigmoid
    margin while splitting failures between the task's distractor and a
    malformed emission with fixed ratio m.
    """
    m = student.malformed_rate
    return CategoricalPolicy(
        logits=np.array([task_margin(student, task), math.log1p(-m), math.log(m)])
    )


def head_margin_gradient(student: StudentState, task: Task) -> np.ndarray:
    """d margin / d skills; the only skill-dependent logit of the head."""
    return student.sharpness * student.kernel[task.level]


def emission_from_outcome(
    task: Task, outcome: int, key: int, alphabet: int, mentions_key: bool
) -> Emission:
    if outcome == EMIT_MALFORMED:
        return Emission(formatted=False, answer=None, mentions=frozenset())
    emitted = task.answer if outcome == EMIT_TRUTH else distractor_answer(task, alphabet)
    mentions = {emitted}
    if mentions_key:
        mentions.add(key)
    return Emission(formatted=True, answer=emitted, mentions=frozenset(mentions))


def verify(emission: Emission, key: int) -> float:
    """Reward ladder over one emission against the proposed answer key."""
    if not emission.formatted:
        return REWARD_MALFORMED
    if emission.answer == key:
        return REWARD_MATCH
    if key in emission.mentions:
        return REWARD_MENTION
    return REWARD_MISMATCH


def _head_probs(student: StudentState, task: Task) -> np.ndarray:
    p = student_success_prob(student, task)
    m = student.malformed_rate
    return np.array([p, (1.0 - p) * (1.0 - m), (1.0 - p) * m])


def draw_outcomes(
    student: StudentState, task: Task, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vector draw of emission classes and mention coin-flips for one task."""
    probs = _head_probs(student, task)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    outcomes = np.searchsorted(cdf, rng.random(size), side="right")
    mention_draws = rng.random(size)
    return outcomes, mention_draws


def rollout_rewards(
    student: StudentState,
    qa: QAPair,
    outcomes: np.ndarray,
    mention_draws: np.ndarray,
    mention_rate: float,
    alphabet: int,
) -> np.ndarray:
    """Vectorized reward ladder over a batch of outcome classes."""
    task = qa.task
    key = qa.proposed_answer
    emitted_by_class = np.array(
        [task.answer, distractor_answer(task, alphabet), -1], dtype=np.int64
    )
    emitted = emitted_by_class[outcomes]
    formatted = outcomes != EMIT_MALFORMED
    match = formatted & (emitted == key)
    mention = formatted & ~match & (mention_draws < mention_rate)
    rewards = np.full(outcomes.shape, REWARD_MISMATCH)
    rewards[match] = REWARD_MATCH
    rewards[mention] = REWARD_MENTION
    rewards[~formatted] = REWARD_MALFORMED
    return rewards


def student_rollout(
    student: StudentState,
    qa: QAPair,
    group_size: int,
    rng: np.random.Generator,
    mention_rate: float = 0.1,
    alphabet: int = 16,
) -> RolloutGroup:
    """Sample a reward-scored rollout group from the student's answer head."""
    if not qa.well_formed:
        raise ContractViolation("cannot roll out a malformed question")
    if group_size < 2:
        raise ContractViolation("rollout group needs at least 2 samples")
    outcomes, mention_draws = draw_outcomes(student, qa.task, group_size, rng)
    rewards = rollout_rewards(student, qa, outcomes, mention_draws, mention_rate, alphabet)
    head = answer_head(student, qa.task)
    log_probs = head.log_probs()
    records = tuple(
        RolloutRecord(outcome=int(o), log_prob=float(log_probs[o]), reward=float(r))
        for o, r in zip(outcomes, rewards)
    )
    return RolloutGroup(records=records)


def greedy_emission_is_truth(student: StudentState, task: Task) -> bool:
    probs = _head_probs(student, task)
    return int(np.argmax(probs)) == EMIT_TRUTH


def greedy_accuracy(student: StudentState, tasks: list[Task]) -> float:
    """Fraction of tasks whose argmax emission is the true answer."""
    if not tasks:
        raise ContractViolation("greedy accuracy over an empty task list")
    hits = sum(1 for t in tasks if greedy_emission_is_truth(student, t))
    return hits / len(tasks)


def embed(task: Task) -> np.ndarray:
    """Unit feature vector used by the diversity metrics."""
    return task.features


def format_filter_space(
    policy: CategoricalPolicy, format_failure: np.ndarray
) -> tuple[CategoricalPolicy, AcceptPredicate, list[tuple[int, bool]]]:
    """Joint (level, formatted) proposal with formatted outcomes as accept set.

    Cells with zero probability are omitted so the joint logits stay
    finite; the accepted distribution over levels is then exactly the
    level softmax renormalized under format filtering.
    """
    scaled = policy.logits / policy.temperature
    outcomes: list[tuple[int, bool]] = []
    logits: list[float] = []
    accepted: set[int] = set()
    for level in range(policy.size):
        f = float(format_failure[level])
        if f < 1.0:
            accepted.add(len(outcomes))
            outcomes.append((level, True))
            logits.append(scaled[level] + math.log1p(-f))
        if f > 0.0:
            outcomes.append((level, False))
            logits.append(scaled[level] + math.log(f))
    if not accepted:
        raise ContractViolation("every level always fails formatting")
    joint = CategoricalPolicy(logits=np.array(logits))
    return joint, AcceptPredicate(frozenset(accepted)), outcomes


@dataclass(frozen=True)
class GeneratedPair:
    """A well-formed teacher generation plus its sampling bookkeeping."""

    qa: QAPair
    level: int
    log_prob: float
    tries_used: int


def teacher_generate(
    teacher_policy: CategoricalPolicy,
    profile: EnvProfile,
    rng: np.random.Generator,
    max_tries: int = DEFAULT_MAX_TRIES,
) -> GeneratedPair:
    """Draw one well-formed question-answer pair from the teacher channel.

    Level comes from the teacher softmax; format failures trigger
    rejection-resampling; the proposed answer is correct with the level's
    generator competence, else a uniform wrong answer. The recorded
    log-prob is the unfiltered proposal log-prob of the accepted draw.
    """
    joint, accept, outcomes = format_filter_space(
        teacher_policy, profile.format_failure
    )
    joint_outcome, tries = filtered_sample(joint, accept, rng, max_tries=max_tries)
    level = outcomes[joint_outcome][0]
    logp = log_prob(joint, joint_outcome)
    task_id = int(rng.integers(2**62))
    task = make_task(profile, task_id, level, rng)
    if rng.random() < profile.generator_competence[level]:
        proposed = task.answer
    else:
        wrong = int(rng.integers(profile.alphabet - 1))
        proposed = wrong if wrong < task.answer else wrong + 1
    qa = QAPair(task=task, proposed_answer=proposed, well_formed=True)
    return GeneratedPair(qa=qa, level=level, log_prob=logp, tries_used=tries)


def level_histogram(levels: list[int], num_levels: int) -> list[int]:
    hist = [0] * num_levels
    for level in levels:
        hist[level] += 1
    return hist


def fail_at_k_sampler(student: StudentState) -> Callable[[Task, int, np.random.Generator], int]:
    """Success-count sampler over k independent head draws for one task."""

    def sampler(task: Task, k: int, rng: np.random.Generator) -> int:
        return int(rng.binomial(k, student_success_prob(student, task)))

    return sampler
