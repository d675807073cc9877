"""Evaluation statistics.

All functions here are pure (plus an explicit RNG where sampling is
involved): unbiased pass@k, 0-of-k hardness filtering, Vendi-score
diversity with bootstrap standardization, pairwise cosine diversity,
and slope-based early stopping on reward curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from stepstone.errors import ContractViolation


@dataclass(frozen=True)
class SampleRecord:
    """Per-task sampling tally: n samples drawn, c of them successful."""

    task_id: int
    n: int
    c: int

    def __post_init__(self):
        if not 0 <= self.c <= self.n:
            raise ContractViolation("need 0 <= c <= n")


@dataclass
class MetricSeries:
    """Scalar series indexed by strictly increasing step numbers."""

    steps: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def append(self, step: int, value: float) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ContractViolation("series steps must be strictly increasing")
        self.steps.append(int(step))
        self.values.append(float(value))

    def __len__(self) -> int:
        return len(self.steps)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, float]]) -> "MetricSeries":
        series = cls()
        for step, value in pairs:
            series.append(step, value)
        return series


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def pass_at_k(record: SampleRecord, k: int) -> float:
    """Unbiased pass@k: 1 - C(n-c, k) / C(n, k).

    Exactly the probability that a uniformly chosen size-k subset of the
    n samples contains at least one success. Binomials are evaluated in
    log space so large n never overflows.
    """
    n, c = record.n, record.c
    if not 1 <= k <= n:
        raise ContractViolation(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    return 1.0 - math.exp(_log_comb(n - c, k) - _log_comb(n, k))


def fail_at_k_filter(
    tasks: Sequence,
    sampler: Callable[[object, int, np.random.Generator], int],
    k: int = 128,
    rng: np.random.Generator | None = None,
) -> list:
    """Retain the tasks with exactly zero successes over k samples each."""
    if k < 1:
        raise ContractViolation("k must be at least 1")
    if rng is None:
        raise ContractViolation("an explicit generator is required")
    return [task for task in tasks if sampler(task, k, rng) == 0]


def _check_unit_rows(embeddings: np.ndarray) -> np.ndarray:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] < 1:
        raise ContractViolation("embeddings must be a nonempty 2-d matrix")
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ContractViolation("embedding rows must be unit norm")
    return embeddings


def vendi_score(embeddings: np.ndarray) -> float:
    """Effective number of distinct rows: exp of the kernel eigen-entropy.

    K is the row-pairwise cosine matrix; the eigenvalues of K/m form a
    probability vector whose exponentiated Shannon entropy lies in [1, m].
    """
    embeddings = _check_unit_rows(embeddings)
    m = embeddings.shape[0]
    kernel = embeddings @ embeddings.T
    eigvals = np.linalg.eigvalsh(kernel / m)
    eigvals = np.clip(eigvals, 0.0, None)
    positive = eigvals[eigvals > 0]
    entropy = -float(np.sum(positive * np.log(positive)))
    return float(math.exp(entropy))


def vendi_bootstrap(
    embeddings: np.ndarray,
    subsample: int = 128,
    iterations: int = 100,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Mean and std of the Vendi score over uniform subsamples.

    Subsampling is without replacement when enough rows exist, with
    replacement otherwise, so every run is standardized to the same
    effective size.
    """
    embeddings = _check_unit_rows(embeddings)
    if rng is None:
        raise ContractViolation("an explicit generator is required")
    m = embeddings.shape[0]
    scores = np.empty(iterations)
    for i in range(iterations):
        idx = rng.choice(m, size=subsample, replace=m < subsample)
        scores[i] = vendi_score(embeddings[idx])
    return float(scores.mean()), float(scores.std())


def pairwise_cosine_diversity(embeddings: np.ndarray) -> float:
    """Mean over unordered row pairs of (1 - cosine similarity), in [0, 2]."""
    embeddings = _check_unit_rows(embeddings)
    m = embeddings.shape[0]
    if m < 2:
        raise ContractViolation("need at least 2 rows for pairwise diversity")
    kernel = embeddings @ embeddings.T
    mean_cos = (kernel.sum() - np.trace(kernel)) / (m * (m - 1))
    return float(1.0 - mean_cos)


def early_stop_step(
    series: MetricSeries,
    smooth_window: int = 25,
    slope_fraction: float = 0.15,
) -> int | None:
    """Earliest step where the smoothed curve's slope falls under threshold.

    The series is smoothed with a centered moving average, discrete
    slopes are normalized by the observed value range, and the first
    step whose normalized slope drops below ``slope_fraction`` of the
    maximum slope is returned. A strictly linear series never qualifies
    (returns None, meaning no plateau); a constant series degenerates to
    the earliest step.
    """
    n = len(series)
    if n <= smooth_window:
        raise ContractViolation("series must be longer than the smoothing window")
    values = np.asarray(series.values, dtype=np.float64)
    half = smooth_window // 2
    centers = range(half, n - half)
    smoothed = np.array([values[i - half : i + half + 1].mean() for i in centers])
    value_range = float(smoothed.max() - smoothed.min())
    if value_range == 0.0:
        return series.steps[0]
    slopes = np.diff(smoothed) / value_range
    max_slope = float(slopes.max())
    if max_slope <= 0.0:
        return series.steps[0]
    below = np.nonzero(slopes < slope_fraction * max_slope)[0]
    if below.size == 0:
        return None
    return series.steps[half + int(below[0])]


def windowed_mean(series: MetricSeries, width: int) -> float:
    """Arithmetic mean of the last min(width, length) values."""
    if len(series) == 0:
        raise ContractViolation("windowed mean of an empty series")
    if width < 1:
        raise ContractViolation("width must be at least 1")
    tail = series.values[-width:]
    return float(sum(tail) / len(tail))
