"""Small statistics toolkit for Monte Carlo oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import stats


def wilson_interval(successes: int, total: int, z: float = 1.96) -> Tuple[float, float]:
    """Wilson score interval for Bernoulli outcomes."""
    if total <= 0:
        return (0.0, 1.0)
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    margin = (z * ((p * (1.0 - p) / total + z2 / (4.0 * total * total)) ** 0.5)) / denom
    return (max(0.0, center - margin), min(1.0, center + margin))


def metric_status(ci_low: float, ci_high: float, threshold: float) -> str:
    if ci_low >= threshold:
        return "pass"
    if ci_high < threshold:
        return "fail"
    return "inconclusive"


@dataclass(frozen=True)
class Proportion:
    successes: int
    total: int

    @property
    def estimate(self) -> float:
        return self.successes / self.total if self.total else 0.0

    @property
    def se(self) -> float:
        if not self.total:
            return 0.0
        p = self.estimate
        return math.sqrt(p * (1.0 - p) / self.total)

    def interval(self, z: float = 1.96) -> Tuple[float, float]:
        return wilson_interval(self.successes, self.total, z)


@dataclass(frozen=True)
class RunningMoments:
    """Count, mean and sum of squared deviations; merge is associative."""
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values: Sequence[float]) -> "RunningMoments":
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            return cls()
        mean = float(arr.mean())
        return cls(int(arr.size), mean, float(((arr - mean) ** 2).sum()))

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return RunningMoments(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def se(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 0 else 0.0


def mean_se(values: Sequence[float]) -> Tuple[float, float]:
    m = RunningMoments.of(values)
    return m.mean, m.se


def z_score(estimate: float, oracle: float, se: float) -> float:
    if se == 0:
        return 0.0 if estimate == oracle else math.copysign(math.inf, estimate - oracle)
    return (estimate - oracle) / se


def bonferroni(alpha: float, tests: int) -> float:
    return alpha / max(1, tests)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    level: float
    alternative: str = "two-sided"

    @property
    def passes(self) -> bool:
        return self.pvalue >= self.level


def ks_two_sample(a: Sequence[float], b: Sequence[float], level: float = 0.01,
                  alternative: str = "two-sided") -> KSResult:
    """Two-sample Kolmogorov-Smirnov test; identical samples pass trivially."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        return KSResult(0.0, 1.0, level, alternative)
    res = stats.ks_2samp(a, b, alternative=alternative)
    return KSResult(float(res.statistic), float(res.pvalue), level, alternative)
