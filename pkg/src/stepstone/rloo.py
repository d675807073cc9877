"""Leave-one-out policy-gradient machinery.

Group advantages, the assembled policy gradient, and rejection-sampling
wrappers. The key property exercised throughout: because leave-one-out
advantages sum to zero, filtering a proposal through an accept set does
not change the gradient, so updates may use raw proposal log-probs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stepstone.errors import ContractViolation, ResampleBudgetError
from stepstone.policies import CategoricalPolicy, sample, score_gradient

DEFAULT_MAX_TRIES = 256


@dataclass(frozen=True)
class RolloutRecord:
    """One sampled outcome with its log-prob at sampling time and reward."""

    outcome: int
    log_prob: float
    reward: float


@dataclass(frozen=True)
class RolloutGroup:
    """A group of rollouts sharing one leave-one-out baseline."""

    records: tuple[RolloutRecord, ...]

    def __post_init__(self):
        if len(self.records) < 2:
            raise ContractViolation("leave-one-out needs a group of at least 2")
        rewards = np.array([r.reward for r in self.records])
        if not np.all(np.isfinite(rewards)):
            raise ContractViolation("rewards must be finite")

    @property
    def size(self) -> int:
        return len(self.records)

    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records], dtype=np.float64)

    def outcomes(self) -> list[int]:
        return [r.outcome for r in self.records]


@dataclass(frozen=True)
class AcceptPredicate:
    """Membership test over outcome indices (the accept set)."""

    accepted: frozenset[int]

    def __post_init__(self):
        if not self.accepted:
            raise ContractViolation("accept set must be nonempty")

    def __contains__(self, outcome: int) -> bool:
        return int(outcome) in self.accepted

    def mass(self, policy: CategoricalPolicy) -> float:
        """Proposal probability of the accept set."""
        p = policy.probs()
        return float(sum(p[i] for i in self.accepted if i < policy.size))


def rloo_advantages(rewards) -> np.ndarray:
    """A_i = R_i minus the mean of the other g-1 rewards; sums to zero."""
    rewards = np.asarray(rewards, dtype=np.float64)
    g = rewards.size
    if g < 2:
        raise ContractViolation("need at least 2 rewards for leave-one-out")
    if not np.all(np.isfinite(rewards)):
        raise ContractViolation("rewards must be finite")
    total = rewards.sum()
    return rewards - (total - rewards) / (g - 1)


def rloo_policy_gradient(policy: CategoricalPolicy, group: RolloutGroup) -> np.ndarray:
    """Sum_i A_i * grad log pi(z_i), invariant to shifting all rewards."""
    advantages = rloo_advantages(group.rewards())
    grad = np.zeros(policy.size)
    for adv, record in zip(advantages, group.records):
        grad += adv * score_gradient(policy, record.outcome)
    return grad


def reinforce_gradient(policy: CategoricalPolicy, group: RolloutGroup) -> np.ndarray:
    """Plain score-function gradient Sum_i R_i * grad log pi(z_i).

    Kept as a foil: without the leave-one-out baseline the rejection
    filtering below does change the gradient, so no trainer here uses it.
    """
    grad = np.zeros(policy.size)
    for record in group.records:
        grad += record.reward * score_gradient(policy, record.outcome)
    return grad


def filtered_sample(
    proposal: CategoricalPolicy,
    accept: AcceptPredicate,
    rng: np.random.Generator,
    max_tries: int = DEFAULT_MAX_TRIES,
) -> tuple[int, int]:
    """Sample from the proposal until accepted; returns (outcome, tries_used).

    The accepted outcome follows the proposal restricted to the accept set
    and renormalized. Exhausting the budget raises ResampleBudgetError,
    converting a collapsed acceptance rate into a diagnosable failure.
    """
    if max_tries < 1:
        raise ContractViolation("max_tries must be at least 1")
    if accept.mass(proposal) <= 0.0:
        raise ContractViolation("accept set has zero proposal probability")
    for tries in range(1, max_tries + 1):
        outcome = sample(proposal, rng)
        if outcome in accept:
            return outcome, tries
    raise ResampleBudgetError(
        f"no accepted outcome within {max_tries} tries", tries_used=max_tries
    )


def log_accept_mass_gradient(
    proposal: CategoricalPolicy, accept: AcceptPredicate
) -> np.ndarray:
    """Gradient of ln pi0(S) w.r.t. the proposal logits."""
    p = proposal.probs()
    mask = np.zeros(proposal.size)
    for i in accept.accepted:
        if i < proposal.size:
            mask[i] = 1.0
    mass = float(np.dot(p, mask))
    return p * (mask - mass) / (proposal.temperature * mass)


def verify_filtered_gradient_identity(
    proposal: CategoricalPolicy,
    accept: AcceptPredicate,
    group: RolloutGroup,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Compute the leave-one-out gradient both ways and their max difference.

    The filtered branch uses log-probs of the renormalized accepted
    distribution, ln pi(z) = ln pi0(z) - ln pi0(S); the unfiltered branch
    uses raw proposal log-probs. Both are assembled independently so the
    agreement is a genuine numerical check, not a tautology.
    """
    for record in group.records:
        if record.outcome not in accept:
            raise ContractViolation(
                f"outcome {record.outcome} lies outside the accept set"
            )
    advantages = rloo_advantages(group.rewards())
    correction = log_accept_mass_gradient(proposal, accept)
    grad_filtered = np.zeros(proposal.size)
    grad_unfiltered = np.zeros(proposal.size)
    for adv, record in zip(advantages, group.records):
        base = score_gradient(proposal, record.outcome)
        grad_unfiltered += adv * base
        grad_filtered += adv * (base - correction)
    max_diff = float(np.max(np.abs(grad_filtered - grad_unfiltered)))
    return grad_filtered, grad_unfiltered, max_diff
