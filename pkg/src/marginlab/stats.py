"""Trial records and interval estimates shared by the experiment runners."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Z95 = 1.959963984540054


@dataclass(frozen=True)
class EstimateCI:
    """Point estimate of a probability with a 95% Wilson score interval."""

    point: float
    lower: float
    upper: float
    n: int
    successes: int = 0

    def contains(self, p: float) -> bool:
        return self.lower <= p <= self.upper


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("Wilson interval needs n >= 1")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo, hi = centre - half, centre + half
    # exact endpoints at the extremes
    if successes == 0:
        lo = 0.0
    if successes == n:
        hi = 1.0
    return max(0.0, lo), min(1.0, hi)


def estimate_from_counts(successes: int, n: int) -> EstimateCI:
    if n == 0:
        return EstimateCI(float("nan"), 0.0, 1.0, 0, 0)
    lo, hi = wilson_interval(successes, n)
    p = successes / n
    return EstimateCI(p, min(lo, p), max(hi, p), n, successes)


def mean_and_se(values) -> tuple[float, float]:
    """Sample mean and its standard error (0 for fewer than two values)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return float("nan"), float("nan")
    mean = math.fsum(x.tolist()) / x.size
    if x.size < 2:
        return mean, 0.0
    var = math.fsum(((x - mean) ** 2).tolist()) / (x.size - 1)
    return mean, math.sqrt(var / x.size)


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    sample_margin_loss: float
    out_of_sample_error: float
    witness_found: bool
    aux: dict = field(default_factory=dict)
    gap: float = float("nan")

    def __post_init__(self):
        g = self.out_of_sample_error - self.sample_margin_loss
        if math.isnan(self.gap):
            object.__setattr__(self, "gap", g)
        elif not (math.isnan(g) or abs(self.gap - g) <= 1e-12):
            raise ValueError("gap is inconsistent with the recorded losses")
