"""Categorical policies with exact log-probabilities and score gradients.

Everything here is a pure function of its inputs (plus an explicit RNG
for sampling), which keeps the training loops referentially transparent
and lets gradient identities be checked to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from stepstone.errors import ContractViolation


@dataclass(frozen=True)
class CategoricalPolicy:
    """Finite categorical distribution parameterized by real logits.

    Probabilities are ``softmax(logits / temperature)``, computed with
    log-sum-exp stabilization so extreme logits never overflow.
    """

    logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 1 or logits.size == 0:
            raise ContractViolation("logits must be a nonempty 1-d vector")
        if not np.all(np.isfinite(logits)):
            raise ContractViolation("logits must be finite")
        if not (self.temperature > 0.0) or not math.isfinite(self.temperature):
            raise ContractViolation("temperature must be a positive real")
        object.__setattr__(self, "logits", logits)

    @property
    def size(self) -> int:
        return int(self.logits.size)

    def log_probs(self) -> np.ndarray:
        scaled = self.logits / self.temperature
        shifted = scaled - scaled.max()
        return shifted - math.log(np.exp(shifted).sum())

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())


def _check_outcome(policy: CategoricalPolicy, outcome: int) -> int:
    outcome = int(outcome)
    if not 0 <= outcome < policy.size:
        raise ContractViolation(
            f"outcome {outcome} outside support of size {policy.size}"
        )
    return outcome


def log_prob(policy: CategoricalPolicy, outcome: int) -> float:
    """Exact log probability of one outcome."""
    outcome = _check_outcome(policy, outcome)
    return float(policy.log_probs()[outcome])


def score_gradient(policy: CategoricalPolicy, outcome: int) -> np.ndarray:
    """Gradient of ``log pi(outcome)`` with respect to the logits.

    Equals ``(onehot(outcome) - probs) / temperature``; entries sum to 0.
    """
    outcome = _check_outcome(policy, outcome)
    grad = -policy.probs() / policy.temperature
    grad[outcome] += 1.0 / policy.temperature
    return grad


def sample(policy: CategoricalPolicy, rng: np.random.Generator) -> int:
    """Draw one outcome; identical generator state gives identical draws."""
    cdf = np.cumsum(policy.probs())
    cdf[-1] = 1.0
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def kl_to_reference(
    policy: CategoricalPolicy, reference: CategoricalPolicy
) -> tuple[float, np.ndarray]:
    """KL(policy || reference) and its gradient w.r.t. the policy logits.

    With p = softmax(l/T), dKL/dl_j = (p_j / T) * ((ln p_j - ln q_j) - KL).
    """
    if policy.size != reference.size:
        raise ContractViolation("policy and reference dimensions differ")
    lp = policy.log_probs()
    lq = reference.log_probs()
    p = np.exp(lp)
    diff = lp - lq
    kl = float(np.dot(p, diff))
    grad = p * (diff - kl) / policy.temperature
    return kl, grad


@dataclass(frozen=True)
class OptimizerState:
    """Adaptive-moment optimizer state with warmup plus cosine decay.

    Decay is decoupled (weight decay applied directly to parameters) and
    the effective learning rate is nonincreasing once warmup completes.
    """

    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    base_lr: float
    warmup_steps: int
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def fresh(
        cls,
        dim: int,
        base_lr: float,
        warmup_steps: int = 0,
        total_steps: int = 1,
        weight_decay: float = 0.0,
    ) -> "OptimizerState":
        if base_lr <= 0 or total_steps < 1 or warmup_steps < 0:
            raise ContractViolation("invalid optimizer schedule parameters")
        return cls(
            step=0,
            first_moment=np.zeros(dim),
            second_moment=np.zeros(dim),
            base_lr=float(base_lr),
            warmup_steps=int(warmup_steps),
            total_steps=int(total_steps),
            weight_decay=float(weight_decay),
        )


def effective_learning_rate(opt: OptimizerState) -> float:
    """Learning rate at ``opt.step``: linear warmup then cosine decay to 0."""
    if opt.warmup_steps > 0 and opt.step < opt.warmup_steps:
        return opt.base_lr * (opt.step + 1) / opt.warmup_steps
    span = max(1, opt.total_steps - opt.warmup_steps)
    progress = (opt.step - opt.warmup_steps) / span
    return opt.base_lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


def apply_update(
    params: np.ndarray, grad: np.ndarray, opt: OptimizerState
) -> tuple[np.ndarray, OptimizerState]:
    """One descent step on ``params``; returns new params and advanced state."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != opt.first_moment.shape:
        raise ContractViolation("parameter/gradient/moment dimensions differ")
    if not np.all(np.isfinite(grad)):
        raise ContractViolation("non-finite gradient rejected")
    if opt.step >= opt.total_steps:
        raise ContractViolation(
            f"optimizer exhausted its schedule ({opt.step} >= {opt.total_steps})"
        )
    lr = effective_learning_rate(opt)
    m = opt.beta1 * opt.first_moment + (1.0 - opt.beta1) * grad
    v = opt.beta2 * opt.second_moment + (1.0 - opt.beta2) * grad * grad
    t = opt.step + 1
    m_hat = m / (1.0 - opt.beta1**t)
    v_hat = v / (1.0 - opt.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    if opt.weight_decay:
        new_params = new_params - lr * opt.weight_decay * params
    new_opt = replace(opt, step=t, first_moment=m, second_moment=v)
    return new_params, new_opt
