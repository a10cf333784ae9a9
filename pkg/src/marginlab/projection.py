"""Random projections, randomized rounding to the 1/sqrt(k) grid, and Monte Carlo
checks of the concentration inequalities behind the upper bound.

A function ``g ~ Q_k(w)`` is a pair ``(A, w_tilde)``: ``A`` is a ``k x d`` matrix of
i.i.d. N(0, 1/k) entries and ``w_tilde`` an unbiased rounding of ``A w`` to the
grid of multiples of ``1/sqrt(k)``; ``g(x) = <A x, w_tilde>``.

Every Monte Carlo routine splits its trials into fixed-size blocks, and block
``b`` draws from ``rng.spawn(tag, b)``.  Block sizes depend only on the problem
shape, so results are reproducible regardless of how blocks are scheduled.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import (AtomDistribution, FiniteDistribution, Hyperplane, LabeledExample,
                   RngStream, Sample, SparseVector, DimensionError, empirical_distribution,
                   sample_from)

MAX_DELTA_K = 4
DELTA_NORM_SQ = 6.0
# float entries handled per Monte Carlo block
_BLOCK_BUDGET = 2_000_000


# ----------------------------------------------------------------------------
# verdicts
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TailVerdict:
    """Empirical event rate set against a theoretical bound.

    ``direction="upper"`` means the bound dominates the rate (passes when
    ``rate <= bound + slack``); ``"lower"`` means the bound is a floor
    (passes when ``rate >= bound - slack``).  Slack is three binomial standard
    deviations at the bound value.
    """

    name: str
    empirical: float
    bound: float
    trials: int
    events: int
    direction: str = "upper"
    params: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        b = min(max(self.bound, 0.0), 1.0)
        return 3.0 * math.sqrt(b * (1.0 - b) / self.trials)

    @property
    def passed(self) -> bool:
        if self.direction == "upper":
            return self.empirical <= self.bound + self.slack
        return self.empirical >= self.bound - self.slack

    @property
    def vacuous(self) -> bool:
        return self.direction == "upper" and self.bound >= 1.0

    def describe(self) -> str:
        op = "<=" if self.direction == "upper" else ">="
        status = "PASS" if self.passed else "FAIL"
        p = " ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                     for k, v in self.params.items())
        return (f"{status} {self.name} [{p}] empirical={self.empirical:.6g} "
                f"{op} bound={self.bound:.6g} (slack {self.slack:.3g}, n={self.trials})")


def make_verdict(name: str, events: int, trials: int, bound: float,
                 direction: str = "upper", **params) -> TailVerdict:
    if trials < 1:
        raise ValueError("need at least one trial")
    return TailVerdict(name, events / trials, float(bound), int(trials), int(events),
                       direction, params)


def _blocks(trials: int, per_trial: int) -> Iterator[tuple[int, int]]:
    size = max(1, min(8192, _BLOCK_BUDGET // max(1, per_trial)))
    done, b = 0, 0
    while done < trials:
        n = min(size, trials - done)
        yield b, n
        done += n
        b += 1


# ----------------------------------------------------------------------------
# projection and rounding
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionMatrix:
    entries: np.ndarray

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]

    def apply(self, x) -> np.ndarray:
        """``A x`` for a dense array or a :class:`SparseVector`."""
        if isinstance(x, SparseVector):
            if x.dim != self.d:
                raise DimensionError(f"vector dim {x.dim} vs projection source dim {self.d}")
            return self.entries[:, x.indices] @ x.values
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d:
            raise DimensionError(f"vector dim {x.shape[-1]} vs projection source dim {self.d}")
        return self.entries @ x


def sample_projection(d: int, k: int, rng: RngStream) -> ProjectionMatrix:
    """``k x d`` matrix with i.i.d. N(0, 1/k) entries."""
    if d < 1 or k < 1:
        raise ValueError("d and k must be positive")
    A = rng.standard_normal((k, d)) / math.sqrt(k)
    A.setflags(write=False)
    return ProjectionMatrix(A)


@dataclass(frozen=True)
class RoundedVector:
    k: int
    grid: np.ndarray  # integer multipliers of 1/sqrt(k)

    @property
    def entries(self) -> np.ndarray:
        return self.grid / math.sqrt(self.k)

    def squared_norm(self) -> float:
        return float(np.sum(self.grid.astype(np.float64) ** 2)) / self.k


def _round_to_grid(v: np.ndarray, k: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    s = math.sqrt(k)
    scaled = np.asarray(v, dtype=np.float64) * s
    if not np.all(np.isfinite(scaled)):
        raise ValueError("cannot round non-finite entries")
    nearest = np.rint(scaled)
    on_grid = np.abs(scaled - nearest) <= 1e-12 * np.maximum(1.0, np.abs(scaled))
    scaled = np.where(on_grid, nearest, scaled)
    lo = np.floor(scaled)
    up = rng.random(scaled.shape) < (scaled - lo)
    z = (lo + up).astype(np.int64)
    out = z / s
    step = 1.0 / s
    if np.any(np.abs(out - v) > step * (1 + 4 * np.finfo(float).eps)):
        raise AssertionError("rounding moved a coordinate by more than one grid step")
    return z, out


def randomized_round(v, rng: RngStream, k: int | None = None) -> RoundedVector:
    """Round each entry of ``v`` up or down to a multiple of ``1/sqrt(k)``.

    An entry ``x`` with ``l <= sqrt(k) x < l + 1`` becomes ``(l + 1)/sqrt(k)`` with
    probability ``sqrt(k) x - l`` and ``l/sqrt(k)`` otherwise, so the result is
    unbiased.  ``k`` defaults to ``len(v)``.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    k = v.size if k is None else int(k)
    z, _ = _round_to_grid(v, k, rng)
    return RoundedVector(k, z)


def sample_g(w: Hyperplane, k: int, rng: RngStream,
             A: ProjectionMatrix | None = None) -> tuple[ProjectionMatrix, RoundedVector]:
    """Draw ``g ~ Q_k(w)``.  Pass ``A`` to pin the projection (test hook)."""
    if A is None:
        A = sample_projection(w.dim, k, rng.spawn("projection"))
    if A.k != k or A.d != w.dim:
        raise DimensionError("projection matrix shape does not match (k, dim w)")
    return A, randomized_round(A.apply(w.weights), rng.spawn("rounding"), k)


def g_eval(A: ProjectionMatrix, w_tilde: RoundedVector, x) -> float:
    """``<A x, w_tilde>``."""
    if w_tilde.k != A.k:
        raise DimensionError(f"rounded vector dim {w_tilde.k} vs projection dim {A.k}")
    return float(A.apply(x) @ w_tilde.entries)


def k_choice(R: float, theta: float, m: float) -> int:
    """Projection dimension ``ceil(240 (R/theta)^2 ln m)``."""
    return math.ceil(240.0 * (R / theta) ** 2 * math.log(m))


# ----------------------------------------------------------------------------
# the finite grid and compatibility
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GridDeltaK:
    k: int
    grid: np.ndarray  # (n, k) integer multipliers

    @property
    def members(self) -> np.ndarray:
        return self.grid / math.sqrt(self.k)

    def __len__(self) -> int:
        return self.grid.shape[0]


def enumerate_delta_k(k: int) -> GridDeltaK:
    """All ``v`` with ``sqrt(k) v`` integral and ``||v||^2 <= 6``."""
    if k < 1:
        raise ValueError("k must be positive")
    if k > MAX_DELTA_K:
        raise ValueError(f"grid enumeration is capped at k={MAX_DELTA_K} (got {k})")
    limit = int(DELTA_NORM_SQ * k)
    r = math.isqrt(limit)
    pts = np.array(list(itertools.product(range(-r, r + 1), repeat=k)), dtype=np.int64)
    keep = np.sum(pts * pts, axis=1) <= limit
    return GridDeltaK(k, pts[keep])


def in_delta_k(v, k: int | None = None) -> bool:
    v = np.asarray(v, dtype=np.float64).ravel()
    k = v.size if k is None else k
    z = v * math.sqrt(k)
    if np.any(np.abs(z - np.rint(z)) > 1e-9):
        return False
    return int(np.sum(np.rint(z) ** 2)) <= DELTA_NORM_SQ * k


def compat_log_term(k: int, delta: float) -> float:
    """``ln(2^(9k) / delta)``."""
    return 9 * k * math.log(2.0) + math.log(1.0 / delta)


def compat_slack(k: int, delta: float, m: int, p_sample: float = 0.0) -> float:
    """Additive allowance on the right of the compatibility inequality."""
    c = compat_log_term(k, delta)
    return 8.0 * c / m + 4.0 * math.sqrt(p_sample * c / m)


@dataclass(frozen=True)
class CompatibilityResult:
    compatible: bool
    worst_v: np.ndarray
    worst_ell: int
    excess: float  # lhs - rhs at the worst pair; positive means violated
    p_dist: float
    p_sample: float


def check_compatible(A: ProjectionMatrix, S: Sample, D: FiniteDistribution,
                     delta: float, k: int | None = None) -> CompatibilityResult:
    """Test the compatibility inequality for every grid vector and threshold.

    For every ``v`` in the grid and ``ell = 1..10k`` the distribution mass of
    ``y <A x, v> <= ell R / (10k)`` must not exceed the sample frequency plus
    ``8c/m + 4 sqrt(freq c / m)`` with ``c = ln(2^(9k)/delta)``.
    """
    k = A.k if k is None else k
    if k != A.k:
        raise DimensionError("k does not match the projection matrix")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    grid = enumerate_delta_k(k)
    V = grid.members
    R = D.radius
    thresholds = np.arange(1, 10 * k + 1) * R / (10 * k)

    def masses(points: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> np.ndarray:
        proj = points @ A.entries.T                      # (n, k)
        scores = labels[:, None] * (proj @ V.T)          # (n, |grid|)
        hit = scores[:, :, None] <= thresholds[None, None, :]
        return np.einsum("n,nvl->vl", weights, hit.astype(np.float64))

    X_D = D.matrix().toarray()
    p_D = masses(X_D, D.labels, D.probabilities())
    if S.source is D:
        idx, counts = S.atom_counts()
        p_S = masses(X_D[idx], D.labels[idx], counts / S.m)
    else:
        p_S = masses(S.dense_matrix(), S.labels(), np.full(S.m, 1.0 / S.m))

    c = compat_log_term(k, delta)
    rhs = p_S + 8.0 * c / S.m + 4.0 * np.sqrt(p_S * c / S.m)
    excess = p_D - rhs
    vi, li = np.unravel_index(int(np.argmax(excess)), excess.shape)
    worst = float(excess[vi, li])
    return CompatibilityResult(worst <= 1e-12, V[vi].copy(), int(li) + 1, worst,
                               float(p_D[vi, li]), float(p_S[vi, li]))


def four_atom_distribution(R: float = 1.0, d: int = 4) -> FiniteDistribution:
    """Small reference distribution: ``R e_i`` with alternating labels, mass 1/4 each."""
    if d < 4:
        raise ValueError("need d >= 4")
    atoms = [(LabeledExample(SparseVector.basis(d, i, R), 1 if i % 2 == 0 else -1), 0.25)
             for i in range(4)]
    return FiniteDistribution(atoms, R)


def verify_compatibility(D: FiniteDistribution, k: int, m: int, delta: float, samples: int,
                         rng: RngStream, A: ProjectionMatrix | None = None) -> TailVerdict:
    """Incompatibility rate over fresh samples for one fixed ``A``, against ``delta/2^k``."""
    if A is None:
        A = sample_projection(D.dim, k, rng.spawn("projection"))
    events = 0
    worst = None
    for i in range(samples):
        S = sample_from(D, m, rng.spawn("compat-sample", i))
        res = check_compatible(A, S, D, delta, k)
        if not res.compatible:
            events += 1
            if worst is None or res.excess > worst.excess:
                worst = res
    params = dict(k=k, m=m, delta=delta)
    if worst is not None:
        params.update(worst_v=np.array2string(worst.worst_v, precision=4),
                      worst_ell=worst.worst_ell)
    return make_verdict("compatibility", events, samples, delta / 2 ** k, **params)


@dataclass(frozen=True)
class RoundingCheck:
    k: int
    trials: int
    max_step_ratio: float   # max |out - in| * sqrt(k); must be <= 1
    max_mean_z: float       # worst per-coordinate |mean - input| / standard error
    fixed_points_ok: bool

    @property
    def passed(self) -> bool:
        return self.max_step_ratio <= 1.0 and self.max_mean_z <= 3.0 and self.fixed_points_ok

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} rounding [k={self.k} n={self.trials}] max|out-in|*sqrt(k)="
                f"{self.max_step_ratio:.6g} worst mean z={self.max_mean_z:.3g} "
                f"fixed points {'unchanged' if self.fixed_points_ok else 'MOVED'}")


def verify_rounding(k: int, trials: int, rng: RngStream, scale: float = 1.0) -> RoundingCheck:
    """Round ``trials`` random vectors, then one vector ``trials`` times, then grid points.

    The per-coordinate mean test uses a single input vector rounded repeatedly,
    with the exact Bernoulli variance of each coordinate as the reference.
    """
    s = math.sqrt(k)
    max_ratio = 0.0
    for b, n in _blocks(trials, k):
        r = rng.spawn("round-random", b)
        V = r.normal(scale=scale, size=(n, k))
        _, out = _round_to_grid(V, k, r)
        max_ratio = max(max_ratio, float(np.max(np.abs(out - V))) * s)
    v = rng.spawn("round-fixed-input").normal(scale=scale, size=k)
    total = np.zeros(k)
    for b, n in _blocks(trials, k):
        r = rng.spawn("round-mean", b)
        _, out = _round_to_grid(np.broadcast_to(v, (n, k)), k, r)
        total += out.sum(axis=0)
    frac = v * s - np.floor(v * s)
    se = np.sqrt(frac * (1 - frac) / trials) / s
    dev = np.abs(total / trials - v)
    z = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev > 0, np.inf, 0.0))
    ints = rng.spawn("round-grid").integers(-3 * int(s) - 3, 3 * int(s) + 4, size=(1000, k))
    _, fixed = _round_to_grid(ints / s, k, rng.spawn("round-grid-draw"))
    return RoundingCheck(k, trials, max_ratio, float(np.max(z)),
                         bool(np.array_equal(np.rint(fixed * s), ints)))


# ----------------------------------------------------------------------------
# concentration checks
# ----------------------------------------------------------------------------

def _check_t(t: float) -> None:
    if not 0 <= t < 0.25:
        raise ValueError("t must lie in [0, 1/4)")


def _projected_pairs(vectors: np.ndarray, k: int, trials: int, rng: RngStream,
                     tag: str) -> Iterator[np.ndarray]:
    """Per block, the images ``A u`` of each row of ``vectors``: shape (b, r, k)."""
    d = vectors.shape[1]
    for b, n in _blocks(trials, k * d):
        A = rng.spawn(tag, b).standard_normal((n, k, d)) / math.sqrt(k)
        yield np.einsum("bkd,rd->brk", A, vectors)


def verify_norm_tail(u, k: int, t: float, trials: int, rng: RngStream) -> TailVerdict:
    """Rate of ``| ||Au||^2 - ||u||^2 | > t ||u||^2`` against ``2 exp(-0.21 k t^2)``."""
    _check_t(t)
    u = np.asarray(u, dtype=np.float64).ravel()
    nu = float(u @ u)
    events = 0
    for Au in _projected_pairs(u[None, :], k, trials, rng, "norm"):
        sq = np.sum(Au[:, 0, :] ** 2, axis=1)
        events += int(np.sum(np.abs(sq - nu) > t * nu))
    return make_verdict("norm", events, trials, 2 * math.exp(-0.21 * k * t * t), k=k, t=t)


def verify_dot_tail(u, v, k: int, t: float, trials: int, rng: RngStream) -> TailVerdict:
    """Rate of ``|<Au, Av> - <u, v>| > t`` against ``4 exp(-k t^2 / (7 ||u||^2 ||v||^2))``."""
    _check_t(t)
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError("u and v differ in dimension")
    uv = float(u @ v)
    scale = float(u @ u) * float(v @ v)
    events = 0
    for P in _projected_pairs(np.stack([u, v]), k, trials, rng, "dot"):
        dots = np.sum(P[:, 0, :] * P[:, 1, :], axis=1)
        events += int(np.sum(np.abs(dots - uv) > t))
    return make_verdict("dot", events, trials, 4 * math.exp(-k * t * t / (7 * scale)), k=k, t=t)


SUM_TAIL_RATES = {"chi_square": 0.21, "product": 0.48}


def verify_sum_tails(kind: str, k: int, t: float, trials: int, rng: RngStream) -> TailVerdict:
    """Tails of ``|sum X_i^2 / k - 1|`` (chi_square) or ``|sum X_i Y_i / k|`` (product)."""
    _check_t(t)
    if kind not in SUM_TAIL_RATES:
        raise ValueError(f"kind must be one of {sorted(SUM_TAIL_RATES)}")
    cols = 1 if kind == "chi_square" else 2
    events = 0
    for b, n in _blocks(trials, cols * k):
        Z = rng.spawn(kind, b).standard_normal((n, cols, k))
        if kind == "chi_square":
            stat = np.abs(np.sum(Z[:, 0] ** 2, axis=1) / k - 1.0)
        else:
            stat = np.abs(np.sum(Z[:, 0] * Z[:, 1], axis=1) / k)
        events += int(np.sum(stat >= t))
    bound = 2 * math.exp(-SUM_TAIL_RATES[kind] * k * t * t)
    return make_verdict(kind, events, trials, bound, k=k, t=t)


@dataclass(frozen=True)
class MgfCheck:
    kind: str
    alpha: float
    estimate: float
    exact: float
    samples: int

    @property
    def relative_error(self) -> float:
        return abs(self.estimate - self.exact) / self.exact


def mgf_exact(kind: str, alpha: float) -> float:
    if kind == "square":
        if not alpha < 0.5:
            raise ValueError("square MGF needs alpha < 1/2")
        return 1.0 / math.sqrt(1.0 - 2.0 * alpha)
    if kind == "product":
        if not -1 < alpha < 1:
            raise ValueError("product MGF needs |alpha| < 1")
        return 1.0 / math.sqrt(1.0 - alpha * alpha)
    raise ValueError("kind must be 'square' or 'product'")


def verify_mgf(kind: str, alpha: float, samples: int, rng: RngStream) -> MgfCheck:
    """Monte Carlo ``E exp(alpha X^2)`` or ``E exp(alpha X Y)`` for standard normals."""
    exact = mgf_exact(kind, alpha)
    cols = 1 if kind == "square" else 2
    total = 0.0
    for b, n in _blocks(samples, cols):
        Z = rng.spawn(f"mgf-{kind}", b).standard_normal((n, cols))
        arg = Z[:, 0] ** 2 if kind == "square" else Z[:, 0] * Z[:, 1]
        total += float(np.sum(np.exp(alpha * arg)))
    return MgfCheck(kind, alpha, total / samples, exact, samples)


DISTORTION_MODES = ("out_of_sample", "in_sample")


def distortion_bound(theta: float, R: float, k: int) -> float:
    """``7 exp(-(k/120) (theta/R)^2)``."""
    return 7.0 * math.exp(-(k / 120.0) * (theta / R) ** 2)


def estimate_margin_distortion(source: AtomDistribution | Sample, w: Hyperplane,
                               theta: float, k: int, trials: int, rng: RngStream,
                               mode: str = "out_of_sample",
                               radius: float | None = None) -> TailVerdict:
    """How often the projected-and-rounded score disagrees badly with the true margin.

    ``out_of_sample``: ``y<x,w> <= 0`` yet ``y g(x) >= 49 theta/100``, with
    ``(x, y)`` drawn from ``source``.  ``in_sample``: ``y<x,w> >= theta`` yet
    ``y g(x) <= theta/2``, with ``(x, y)`` uniform over a sample.
    """
    if mode not in DISTORTION_MODES:
        raise ValueError(f"mode must be one of {DISTORTION_MODES}")
    if isinstance(source, Sample):
        if radius is None and source.source is not None:
            radius = source.source.radius
        source = empirical_distribution(source, radius)
    if not isinstance(source, FiniteDistribution):
        raise TypeError("distortion estimates need an explicit FiniteDistribution")
    R = source.radius
    if not 0 < theta <= R:
        raise ValueError("theta must lie in (0, R]")
    if w.norm > 1 + 1e-12:
        raise ValueError("w must have norm at most one")
    if w.dim != source.dim:
        raise DimensionError("hyperplane and distribution dimensions differ")
    X = source.matrix().toarray()
    y = source.labels
    wd = w.dense()
    true_margins = y * (X @ wd)
    d = source.dim
    events = 0
    for b, n in _blocks(trials, k * d):
        r = rng.spawn(f"distortion-{mode}", b)
        idx = source.draw_indices(n, r)
        A = r.standard_normal((n, k, d)) / math.sqrt(k)
        Ax = np.einsum("bkd,bd->bk", A, X[idx])
        Aw = A @ wd
        _, w_tilde = _round_to_grid(Aw, k, r)
        g = y[idx] * np.sum(Ax * w_tilde, axis=1)
        tm = true_margins[idx]
        if mode == "out_of_sample":
            hit = (tm <= 0) & (g >= 0.49 * theta)
        else:
            hit = (tm >= theta) & (g <= theta / 2)
        events += int(np.sum(hit))
    return make_verdict(f"distortion-{mode}", events, trials, distortion_bound(theta, R, k),
                        k=k, theta=theta, R=R)


def estimate_off_grid_rate(w: Hyperplane, k: int, trials: int, rng: RngStream) -> TailVerdict:
    """Rate of ``w_tilde`` landing outside the grid, against ``exp(-k/24)``."""
    if w.norm > 1 + 1e-12:
        raise ValueError("w must have norm at most one")
    wd = w.dense()
    events = 0
    for b, n in _blocks(trials, k * w.dim):
        r = rng.spawn("offgrid", b)
        A = r.standard_normal((n, k, w.dim)) / math.sqrt(k)
        z, _ = _round_to_grid(A @ wd, k, r)
        events += int(np.sum(np.sum(z * z, axis=1) > DELTA_NORM_SQ * k))
    return make_verdict("off-grid", events, trials, math.exp(-k / 24.0), k=k)
