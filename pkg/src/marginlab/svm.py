"""Soft-margin linear SVM by full-batch hinge-loss subgradient descent.

Objective (no bias term)::

    F(w) = lam/2 ||w||^2 + (1/m) sum_i max(0, 1 - y_i <x_i, w>)

Averaging over the sample makes ``S + S`` train to the same ``w`` as ``S``.
With ``lam = 0`` on separable data the updates stop once every margin reaches
one, which approximates the hard-margin problem up to one step size.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Hyperplane, Sample, SparseVector, STRICT, _tol
from .sparsefmt import read_hyperplane, write_hyperplane

SCHEDULES = ("inverse", "constant")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.01
    epochs: int = 200
    eta0: float = 0.1
    decay: float = 0.01
    schedule: str = "inverse"
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if not self.decay >= 0:
            raise ValueError("decay must be non-negative")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")

    def rate(self, t: int) -> float:
        if self.schedule == "constant":
            return self.eta0
        return self.eta0 / (1.0 + t * self.decay)


@dataclass
class TrainResult:
    w: Hyperplane
    objective: list = field(default_factory=list)
    config: TrainConfig | None = None

    @property
    def final_objective(self) -> float:
        return self.objective[-1]


def objective(X: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    hinge = np.maximum(0.0, 1.0 - y * (X @ w))
    return 0.5 * lam * float(w @ w) + float(np.mean(hinge))


def train_soft_margin(S: Sample, cfg: TrainConfig | None = None) -> TrainResult:
    """Returns the unnormalized weights and the objective after every epoch.

    The update is deterministic; ``cfg.seed`` is recorded for provenance only.
    The best iterate seen (by objective) is returned, which keeps the trace's
    minimum and the returned ``w`` consistent under step noise.
    """
    cfg = cfg or TrainConfig()
    if S.m == 0:
        raise ValueError("empty sample")
    X = S.dense_matrix()
    y = S.labels().astype(np.float64)
    w = np.zeros(X.shape[1])
    best, best_obj = w.copy(), objective(X, y, w, cfg.lam)
    trace = []
    for t in range(cfg.epochs):
        # overflow shows up as a non-finite iterate, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            active = y * (X @ w) < 1.0
            grad = cfg.lam * w - (y[active] @ X[active]) / S.m
            w = w - cfg.rate(t) * grad
            obj = objective(X, y, w, cfg.lam)
        if not (np.all(np.isfinite(w)) and math.isfinite(obj)):
            raise TrainingDiverged(f"non-finite iterate at epoch {t} (rate {cfg.rate(t):.3g})")
        if obj > 1e12:
            raise TrainingDiverged(f"objective {obj:.3g} at epoch {t}; lower eta0")
        trace.append(obj)
        if obj < best_obj:
            best, best_obj = w.copy(), obj
    return TrainResult(Hyperplane.from_dense(best), trace, cfg)


def normalize(w: Hyperplane) -> Hyperplane:
    """``w / ||w||``; raises on the zero vector."""
    return w.normalized()


class MarginProfile:
    """Sorted sample margins; ``loss(theta)`` is the strict in-sample margin loss."""

    def __init__(self, margins):
        self.margins = sorted(float(x) for x in margins)
        if not self.margins:
            raise ValueError("empty profile")

    @property
    def m(self) -> int:
        return len(self.margins)

    def loss(self, theta: float, mode: str = STRICT) -> float:
        # same tolerance as core.below, applied as a shifted cut point
        if mode == STRICT:
            cut = bisect.bisect_left(self.margins, theta - _tol(theta))
        else:
            cut = bisect.bisect_right(self.margins, theta + _tol(theta))
        return cut / self.m

    def quantile(self, q: float) -> float:
        if not 0 <= q <= 1:
            raise ValueError("q must lie in [0, 1]")
        return float(np.quantile(self.margins, q, method="lower"))


def margin_profile(S: Sample, w: Hyperplane) -> MarginProfile:
    if w.norm > 1 + 1e-12:
        raise ValueError("margin profiles expect ||w|| <= 1")
    return MarginProfile(S.margins(w))


def svm_learner(cfg: TrainConfig | None = None):
    """Plug-in learner ``(S, rng) -> unit Hyperplane`` for the adversary game."""
    return _SvmLearner(cfg or TrainConfig())


@dataclass(frozen=True)
class _SvmLearner:
    cfg: TrainConfig

    def __call__(self, S: Sample, rng=None) -> Hyperplane:
        w = train_soft_margin(S, self.cfg).w
        if w.norm == 0:
            return Hyperplane(SparseVector(S.dim, [], []))
        return w.normalized()


def save_model(result: TrainResult | Hyperplane, path, meta: dict | None = None) -> None:
    w = result.w if isinstance(result, TrainResult) else result
    info = dict(meta or {})
    if isinstance(result, TrainResult) and result.config is not None:
        c = result.config
        info.update(lam=c.lam, epochs=c.epochs, eta0=c.eta0, decay=c.decay,
                    schedule=c.schedule, seed=c.seed, objective=result.final_objective)
    write_hyperplane(w, path, info)


def load_model(path) -> tuple[Hyperplane, dict]:
    return read_hyperplane(path)
