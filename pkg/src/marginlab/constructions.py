"""Lower-bound constructions and their witness hyperplanes.

* small tau: uniform over ``u`` two-spike points; with ``m`` samples many points
  stay unseen, and a witness pushes a few unseen ones to margin ``-theta`` while
  every seen point keeps margin exactly ``theta``.
* large tau: the same point family with fewer atoms; the witness flips the ``k``
  least-sampled points.
* adversarial family ``D_ell``: points ``R e_i`` with labels tied to a hidden sign
  vector ``ell``, used to show that no learner beats the margin rate.

The tiny theoretical constant in ``k = c_k tau u`` is exposed as ``c_k``
(default 1/4), and sizes that the analysis treats as integers are rounded up.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import digamma

from .core import (FiniteDistribution, Hyperplane, LabeledExample, RngStream, Sample,
                   SparseVector, SpikedUniformDistribution, DimensionError, STRICT,
                   below, empirical_margin_loss, exact_margin_error,
                   exact_out_of_sample_error, sample_from)
from .projection import TailVerdict, make_verdict
from .stats import EstimateCI, TrialRecord, estimate_from_counts, mean_and_se


class ParameterRegimeError(ValueError):
    """Parameters fall outside the regime in which a construction is defined."""


# ----------------------------------------------------------------------------
# small tau
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SmallTauInstance:
    R: float
    theta: float
    m: int
    epsilon: float
    u: int
    t: int
    D: SpikedUniformDistribution

    @property
    def n_flip(self) -> int:
        """Number of unseen points the witness pushes below zero, ``ceil(t/16)``."""
        return -(-self.t // 16)

    @property
    def witness_error(self) -> float:
        return self.n_flip / self.u


def build_small_tau(R: float, theta: float, m: int, epsilon: float = 0.001,
                    C: float = 4.0) -> SmallTauInstance:
    """Uniform distribution over ``u = ceil(4e m / (epsilon ln m))`` spiked points."""
    if not (R > 0 and theta > 0 and epsilon > 0):
        raise ValueError("R, theta and epsilon must be positive")
    ratio_sq = (R / theta) ** 2
    if R < C * theta:
        raise ParameterRegimeError(f"need R >= {C} theta")
    if m < ratio_sq ** (1 + epsilon):
        raise ParameterRegimeError(f"need m >= (R/theta)^(2(1+eps)) = {ratio_sq ** (1 + epsilon):.6g}")
    t = math.floor(ratio_sq)
    n_flip = -(-t // 16)
    if (2 + 8 * n_flip) / ratio_sq >= 1:
        raise ParameterRegimeError("witness norm would reach 1; increase R/theta")
    u = math.ceil(4 * math.e * m / (epsilon * math.log(m)))
    if u <= t:
        raise ParameterRegimeError("u must exceed t")
    return SmallTauInstance(R, theta, int(m), epsilon, u, t, SpikedUniformDistribution(u, R))


def unseen_count(u: int, S: Sample) -> int:
    return u - int(np.unique(S.atom_indices).size)


def lowest_unseen(S: Sample, count: int) -> np.ndarray:
    seen = np.unique(S.atom_indices)
    candidates = np.arange(seen.size + count)
    return candidates[~np.isin(candidates, seen)][:count]


def witness_small_tau(inst: SmallTauInstance, S: Sample,
                      rng: RngStream | None = None) -> Hyperplane | None:
    """Witness hyperplane, or ``None`` when fewer than ``ceil(t/16)`` points are unseen.

    Chosen points are the lowest-index unseen ones, so ``rng`` is unused; it is
    accepted to keep the learner-style signature.
    """
    if S.source is not inst.D:
        raise ValueError("sample was not drawn from this instance")
    n = inst.n_flip
    chosen = lowest_unseen(S, n)
    if chosen.size < n or chosen[-1] >= inst.u:
        return None
    c = inst.theta * math.sqrt(2.0) / inst.R
    idx = np.append(chosen, inst.u)
    vals = np.append(np.full(n, -2.0 * c), c)
    w = Hyperplane(SparseVector(inst.u + 1, idx, vals))
    assert w.norm < 1.0, "witness norm must stay below one"
    return w


# ----------------------------------------------------------------------------
# coupon collector
# ----------------------------------------------------------------------------

def harmonic_difference(u: int, t: int) -> float:
    """``H_u - H_t``; compensated summation for moderate ``u``, digamma beyond."""
    if u - t <= 2_000_000:
        return math.fsum(1.0 / j for j in range(t + 1, u + 1))
    return float(digamma(u + 1) - digamma(t + 1))


@dataclass(frozen=True)
class CouponModel:
    u: int
    t: int
    expectation: float
    p_star: float
    lam: float | None = None


def coupon_expectation(u: int, t: int, m: float | None = None) -> CouponModel:
    """Expected draws to see ``u - t`` distinct items out of ``u``: ``u (H_u - H_t)``."""
    if not 1 <= t < u:
        raise ValueError("need 1 <= t < u")
    e = u * harmonic_difference(u, t)
    return CouponModel(u, t, e, (t + 1) / u, None if m is None else m / e)


def geometric_sum_tail(model: CouponModel, m: float) -> float:
    """Upper bound on ``Pr[X <= m]``: ``exp(-p* E[X] (lam - 1 - ln lam))``, ``lam = m/E[X]``."""
    lam = m / model.expectation
    if not 0 < lam < 1:
        raise ValueError(f"lambda = {lam:.6g} outside (0, 1); bound does not apply")
    return math.exp(-model.p_star * model.expectation * (lam - 1 - math.log(lam)))


def simulate_coupon(u: int, t: int, runs: int, rng: RngStream) -> np.ndarray:
    """Draw uniformly from ``u`` items until ``u - t`` are distinct; return the draw counts."""
    target = u - t
    seen = np.zeros((runs, u), dtype=bool)
    distinct = np.zeros(runs, dtype=np.int64)
    draws = np.zeros(runs, dtype=np.int64)
    active = np.arange(runs)
    while active.size:
        pick = rng.integers(0, u, size=active.size)
        new = ~seen[active, pick]
        seen[active, pick] = True
        distinct[active] += new
        draws[active] += 1
        active = active[distinct[active] < target]
    return draws


def simulate_coupon_tail(u: int, t: int, m: int, runs: int, rng: RngStream) -> int:
    """Number of runs in which ``m`` draws already cover ``u - t`` distinct items."""
    hits = 0
    block = max(1, 1_000_000 // max(1, m))
    for b, start in enumerate(range(0, runs, block)):
        n = min(block, runs - start)
        draws = np.sort(rng.spawn("coupon-tail", b).integers(0, u, size=(n, m)), axis=1)
        distinct = 1 + np.sum(np.diff(draws, axis=1) != 0, axis=1)
        hits += int(np.sum(distinct >= u - t))
    return hits


def verify_coupon_tail(u: int, t: int, m: int, runs: int, rng: RngStream) -> TailVerdict:
    model = coupon_expectation(u, t)
    bound = geometric_sum_tail(model, m)
    events = simulate_coupon_tail(u, t, m, runs, rng)
    return make_verdict("coupon-tail", events, runs, bound, u=u, t=t, m=m)


# ----------------------------------------------------------------------------
# large tau
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class LargeTauInstance:
    R: float
    theta: float
    tau: float
    m: int
    c_k: float
    u: int
    k: int
    D: SpikedUniformDistribution

    @property
    def flipped_margin(self) -> float:
        return self.theta - self.R / (2 * math.sqrt(self.k))

    @property
    def witness_error(self) -> float:
        return self.k / self.u


def build_large_tau(R: float, theta: float, tau: float, m: int,
                    c_k: float = 0.25, strict_regime: bool = False) -> LargeTauInstance:
    """Uniform over ``u = ceil(R^2 / (16 theta^2 tau))`` spiked points, ``k = floor(c_k tau u)``.

    The lower end of the regime, ``tau > R^2 ln m / (theta^2 m)``, hides a
    constant; violating it only warns unless ``strict_regime`` is set.
    """
    if not (R > 0 and theta > 0):
        raise ValueError("R and theta must be positive")
    if not 0 < c_k <= 1:
        raise ValueError("c_k must lie in (0, 1]")
    ratio_sq = (R / theta) ** 2
    if not 0 < tau <= 1:
        raise ParameterRegimeError("need 0 < tau <= 1")
    floor = ratio_sq * math.log(m) / m
    if not tau > floor:
        msg = f"tau = {tau:g} is not above R^2 ln m / (theta^2 m) = {floor:.4g}"
        if strict_regime:
            raise ParameterRegimeError(msg)
        warnings.warn(msg, stacklevel=2)
    u = math.ceil(ratio_sq / (16 * tau))
    k = math.floor(c_k * tau * u)
    if k < 1:
        warnings.warn(f"c_k * tau * u = {c_k * tau * u:.3g} < 1; clamping k to 1", stacklevel=2)
        k = 1
    if k > ratio_sq / 16:
        raise ParameterRegimeError("k exceeds R^2/(16 theta^2); flipped margins would not reach -theta")
    if 2 * theta ** 2 / R ** 2 + 0.5 > 1:
        raise ParameterRegimeError("witness norm would exceed one")
    return LargeTauInstance(R, theta, tau, int(m), c_k, u, k, SpikedUniformDistribution(u, R))


def atom_counts(inst, S: Sample) -> np.ndarray:
    if S.source is not inst.D:
        raise ValueError("sample was not drawn from this instance")
    return np.bincount(S.atom_indices, minlength=inst.u)


def lightest_atoms(inst: LargeTauInstance, S: Sample) -> tuple[np.ndarray, int]:
    """The ``k`` least-sampled indices (ties by lowest index) and their total count."""
    counts = atom_counts(inst, S)
    T = np.sort(np.argsort(counts, kind="stable")[: inst.k])
    return T, int(counts[T].sum())


def witness_large_tau(inst: LargeTauInstance, S: Sample) -> Hyperplane:
    T, _ = lightest_atoms(inst, S)
    idx = np.append(T, inst.u)
    vals = np.append(np.full(T.size, -1.0 / math.sqrt(2 * inst.k)),
                     inst.theta * math.sqrt(2.0) / inst.R)
    w = Hyperplane(SparseVector(inst.u + 1, idx, vals))
    assert w.norm <= 1.0, "witness norm must not exceed one"
    return w


def delta_large_tau(inst: LargeTauInstance | tuple[int, int], m: int) -> float:
    """``sqrt(ln(u/(2k)) / (9 m/u))``; warns outside the reverse-Chernoff window."""
    u, k = (inst.u, inst.k) if isinstance(inst, LargeTauInstance) else inst
    if u <= 2 * k:
        raise ParameterRegimeError("need u > 2k")
    d = math.sqrt(math.log(u / (2 * k)) / (9 * m / u))
    if not math.sqrt(3 * u / m) < d < 0.5:
        warnings.warn(f"delta = {d:.4g} outside the reverse-Chernoff range", stacklevel=2)
    return d


def large_tau_gap_floor(inst: LargeTauInstance, m: int) -> float:
    return inst.k * delta_large_tau(inst, m) / inst.u


# ----------------------------------------------------------------------------
# reverse Chernoff
# ----------------------------------------------------------------------------

def reverse_chernoff_bound(m: int, p: float, delta: float) -> float:
    """Lower bound ``exp(-9 m p delta^2)`` on ``Pr[Bin(m, p) <= (1 - delta) m p]``."""
    lo = math.sqrt(3.0 / (m * p))
    if not lo < delta < 0.5:
        raise ValueError(f"delta must lie in ({lo:.6g}, 1/2)")
    return math.exp(-9.0 * m * p * delta * delta)


@dataclass(frozen=True)
class ReverseChernoffCheck:
    verdict: TailVerdict
    estimate: EstimateCI
    threshold: float


def verify_reverse_chernoff(m: int, p: float, delta: float, trials: int,
                            rng: RngStream) -> ReverseChernoffCheck:
    """Simulate sums of ``m`` Bernoulli(p) indicators and count lower-tail hits."""
    bound = reverse_chernoff_bound(m, p, delta)
    thr = (1 - delta) * m * p
    hits = 0
    block = max(1, 2_000_000 // m)
    for b, start in enumerate(range(0, trials, block)):
        n = min(block, trials - start)
        c = rng.spawn("reverse-chernoff", b).random((n, m)) < p
        hits += int(np.sum(c.sum(axis=1) <= thr))
    verdict = make_verdict("reverse-chernoff", hits, trials, bound, direction="lower",
                           m=m, p=p, delta=delta)
    return ReverseChernoffCheck(verdict, estimate_from_counts(hits, trials), thr)


# ----------------------------------------------------------------------------
# adversarial family
# ----------------------------------------------------------------------------

def adversarial_k(R: float, theta: float) -> int:
    """``floor((R/theta)^2)`` rounded down to an even number."""
    k = math.floor((R / theta) ** 2)
    k -= k % 2
    if k < 2:
        raise ParameterRegimeError("need (R/theta)^2 >= 2")
    return k


@dataclass(frozen=True)
class AdversarialInstance:
    R: float
    theta: float
    k: int
    ell: np.ndarray
    alpha: float
    beta: float
    epsilon: float
    D: FiniteDistribution
    w: Hyperplane

    @property
    def margin_error(self) -> float:
        """``(1 - alpha) beta / 2``."""
        return (1 - self.alpha) * self.beta / 2


def build_adversarial(ell, R: float, theta: float, alpha: float, beta: float,
                      epsilon: float) -> AdversarialInstance:
    ell = np.asarray(ell, dtype=np.int64).ravel()
    for name, v in (("alpha", alpha), ("beta", beta), ("epsilon", epsilon)):
        if not 0 <= v <= 1:
            raise ValueError(f"{name} must lie in [0, 1]")
    k = adversarial_k(R, theta)
    if ell.size != k:
        raise DimensionError(f"ell has length {ell.size}, expected k = {k}")
    if not np.all(np.abs(ell) == 1):
        raise ValueError("ell must be a +-1 vector")
    half = k // 2
    if half == 1 and epsilon > 0:
        raise ParameterRegimeError("k = 2 leaves no light atoms for epsilon > 0")
    atoms = []
    e = lambda i: SparseVector.basis(k, i, R)  # noqa: E731
    atoms.append((LabeledExample(e(0), int(ell[0])), (1 - beta) * (1 - epsilon)))
    for i in range(1, half):
        atoms.append((LabeledExample(e(i), int(ell[i])), (1 - beta) * epsilon / (half - 1)))
    for i in range(half, k):
        atoms.append((LabeledExample(e(i), int(ell[i])), (1 + alpha) * beta / k))
        atoms.append((LabeledExample(e(i), -int(ell[i])), (1 - alpha) * beta / k))
    D = FiniteDistribution(atoms, R)
    w = Hyperplane(SparseVector(k, np.arange(k), ell / math.sqrt(k)))
    return AdversarialInstance(R, theta, k, ell, alpha, beta, epsilon, D, w)


def adversary_params(tau: float, k: int, m: int) -> tuple[float, float, float]:
    """``(alpha, beta, epsilon)`` for target in-sample loss ``tau``."""
    if not 0 <= tau <= 0.49:
        raise ValueError("tau must lie in [0, 49/100]")
    if tau <= k / (300 * m):
        eps = k / (10 * m)
        if eps > 1:
            raise ParameterRegimeError("k/(10m) exceeds one; m is too small")
        return 0.0, 0.0, eps
    alpha = math.sqrt(k / (2560 * tau * m))
    beta = 64 * tau / (32 - 31 * alpha)
    if alpha > 1 or beta > 1:
        raise ParameterRegimeError("alpha or beta leaves [0, 1]; m is too small relative to k")
    return alpha, beta, 0.0


def claim_conditions(alpha: float, beta: float, epsilon: float, k: int, m: int) -> bool:
    """``alpha <= sqrt(k/(40 beta m))`` and ``epsilon <= k/(10m)``."""
    a_ok = beta == 0 or alpha <= math.sqrt(k / (40 * beta * m)) * (1 + 1e-12)
    return a_ok and epsilon <= k / (10 * m) * (1 + 1e-12)


def phi(a: float, b: float) -> float:
    """``(1/4)(1 - sqrt(1 - exp(-a b^2 / (1 - b^2))))``."""
    if not a > 0:
        raise ValueError("a must be positive")
    if not 0 <= b < 1:
        raise ValueError("b must lie in [0, 1)")
    return 0.25 * (1.0 - math.sqrt(-math.expm1(-a * b * b / (1.0 - b * b))))


def expectation_floor(alpha: float, beta: float, epsilon: float) -> float:
    """``(1-alpha) beta / 2 + ((1-beta) epsilon + alpha beta) / 6``."""
    return (1 - alpha) * beta / 2 + ((1 - beta) * epsilon + alpha * beta) / 6


def psi(w: Hyperplane, inst: AdversarialInstance) -> float:
    """Error mass (``y<w,x> < 0``) excluding the heavy atom ``(R e_1, ell_1)``."""
    margins = inst.D.atom_margins(w)
    wrong = below(margins, 0.0, STRICT)
    probs = inst.D.probabilities()
    return math.fsum(probs[1:][wrong[1:]].tolist())


def majority_vote_learner(S: Sample, rng: RngStream) -> Hyperplane:
    """Per-coordinate majority label on axis-aligned points, unit norm.

    Coordinates never seen, or seen with a tied vote, get an independent random
    sign, so the output never depends on labels the sample does not reveal.
    """
    d = S.dim
    votes = np.zeros(d)
    for ex in S.examples:
        votes[ex.point.indices] += ex.label * np.sign(ex.point.values)
    signs = np.sign(votes)
    ties = signs == 0
    signs[ties] = rng.choice(np.array([-1.0, 1.0]), size=int(ties.sum()))
    return Hyperplane.from_dense(signs / math.sqrt(d))


Learner = Callable[[Sample, RngStream], Hyperplane]


def adversary_trial(index: int, seed: int, learner: Learner, R: float, theta: float,
                    k: int, m: int, params: tuple[float, float, float]) -> TrialRecord:
    rng = RngStream.derive(seed, "adversary", index)
    ell = rng.spawn("ell").choice(np.array([-1, 1]), size=k)
    inst = build_adversarial(ell, R, theta, *params)
    S = sample_from(inst.D, m, rng.spawn("sample"))
    w = learner(S, rng.spawn("learner"))
    if w.dim != k:
        raise DimensionError(f"learner returned dim {w.dim}, expected {k}")
    half = k // 2
    seen = np.zeros(k, dtype=bool)
    for ex in S.examples:
        seen[ex.point.indices] = True
    light = np.arange(1, half)
    unseen_light = light[~seen[light]]
    light_wrong = ell[unseen_light] * w.weights.values_at(unseen_light) < 0
    aux = {
        "psi": psi(w, inst),
        "error_strict": exact_margin_error(inst.D, w, 0.0, STRICT),
        "witness_error": exact_out_of_sample_error(inst.D, inst.w),
        "witness_margin_error": exact_margin_error(inst.D, inst.w, theta, STRICT),
        "unseen_light": float(unseen_light.size),
        "unseen_light_wrong": float(light_wrong.sum()),
    }
    return TrialRecord(index, rng.stream_id,
                       empirical_margin_loss(S, inst.w, theta, STRICT),
                       exact_out_of_sample_error(inst.D, w), True, aux)


@dataclass(frozen=True)
class AdversaryGameResult:
    records: list
    k: int
    alpha: float
    beta: float
    epsilon: float
    psi_mean: float
    psi_se: float
    error_mean: float
    error_se: float

    @property
    def floor(self) -> float:
        return expectation_floor(self.alpha, self.beta, self.epsilon)


def run_adversary_game(learner: Learner, R: float, theta: float, tau: float, m: int,
                       trials: int, seed: int, jobs: int = 1) -> AdversaryGameResult:
    """Play ``trials`` rounds against ``learner``, each with a fresh uniform ``ell``.

    ``learner(S, rng)`` receives the sample and a private stream.  With
    ``jobs > 1`` it must be picklable (module-level function or class).
    """
    from .harness import map_trials

    k = adversarial_k(R, theta)
    params = adversary_params(tau, k, m)
    records = map_trials(adversary_trial, trials, jobs,
                         seed=seed, learner=learner, R=R, theta=theta, k=k, m=m,
                         params=params)
    pm, ps = mean_and_se([r.aux["psi"] for r in records])
    em, es = mean_and_se([r.out_of_sample_error for r in records])
    return AdversaryGameResult(records, k, *params, pm, ps, em, es)
