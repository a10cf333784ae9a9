"""Closed-form margin generalization bounds.

Each evaluator replaces the unspecified ``O(.)``/``Omega(.)`` constant by a single
user-supplied ``C`` and returns a :class:`BoundReport` carrying the additive
terms, so shapes can be compared independently of constants.  Values are never
clamped; ``report.vacuous`` flags values above one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class BoundInputs:
    R: float
    theta: float
    m: float
    delta: float = 1.0
    L: float = 0.0
    C: float = 1.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not self.m >= 2:
            raise ValueError("m must be at least 2")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if not 0 <= self.L <= 1:
            raise ValueError("L must lie in [0, 1]")
        if not self.C >= 0:
            raise ValueError("C must be non-negative")

    @property
    def ratio_sq(self) -> float:
        """(R / theta)^2"""
        return (self.R / self.theta) ** 2

    @property
    def log_m(self) -> float:
        return math.log(self.m)

    @property
    def log_inv_delta(self) -> float:
        return -math.log(self.delta)

    @property
    def nondegenerate(self) -> bool:
        """False when theta > R, where every margin loss is trivially one."""
        return self.theta <= self.R

    def with_(self, **kw) -> "BoundInputs":
        return replace(self, **kw)


@dataclass(frozen=True)
class BoundReport:
    name: str
    value: float
    components: dict = field(default_factory=dict)

    @property
    def vacuous(self) -> bool:
        return self.value > 1.0

    def __float__(self) -> float:
        return self.value


def _report(name: str, **terms: float) -> BoundReport:
    return BoundReport(name, math.fsum(terms.values()), dict(terms))


def pi_term(inp: BoundInputs) -> float:
    """``((R/theta)^2 ln m + ln(1/delta)) / m``."""
    return (inp.ratio_sq * inp.log_m + inp.log_inv_delta) / inp.m


def bound_bst_hard(inp: BoundInputs) -> BoundReport:
    # stated for samples with no margin errors; L is not added
    core = (inp.ratio_sq * inp.log_m ** 2 + inp.log_inv_delta) / inp.m
    return _report("bound_bst_hard", complexity=inp.C * core)


def bound_bst_soft(inp: BoundInputs) -> BoundReport:
    core = (inp.ratio_sq * inp.log_m ** 2 + inp.log_inv_delta) / inp.m
    return _report("bound_bst_soft", empirical=inp.L, complexity=inp.C * math.sqrt(core))


def bound_bm(inp: BoundInputs) -> BoundReport:
    core = (inp.ratio_sq + inp.log_inv_delta) / inp.m
    return _report("bound_bm", empirical=inp.L, complexity=inp.C * math.sqrt(core))


def bound_mcallester(inp: BoundInputs) -> BoundReport:
    a = inp.ratio_sq * inp.log_m / inp.m
    return _report(
        "bound_mcallester",
        empirical=inp.L,
        hard=inp.C * a,
        interpolation=inp.C * math.sqrt(a * inp.L),
        confidence=inp.C * math.sqrt((inp.log_m + inp.log_inv_delta) / inp.m),
    )


def bound_main(inp: BoundInputs) -> BoundReport:
    p = pi_term(inp)
    return _report("bound_main", empirical=inp.L, hard=inp.C * p,
                   interpolation=inp.C * math.sqrt(p * inp.L))


def bound_combined(inp: BoundInputs) -> BoundReport:
    a = inp.ratio_sq / inp.m
    return _report("bound_combined", empirical=inp.L, hard=inp.C * a * inp.log_m,
                   soft=inp.C * math.sqrt(a * min(inp.log_m * inp.L, 1.0)))


def _tau_log_inv_tau(tau: float) -> float:
    # 0 ln(1/0) is taken to be 0
    return 0.0 if tau == 0 else -tau * math.log(tau)


def lower_existential(inp: BoundInputs, tau: float) -> BoundReport:
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    a = inp.ratio_sq / inp.m
    return _report("lower_existential", tau=tau, hard=inp.C * a * inp.log_m,
                   soft=inp.C * math.sqrt(a * _tau_log_inv_tau(tau)))


def lower_algorithmic(inp: BoundInputs, tau: float) -> BoundReport:
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    a = inp.ratio_sq / inp.m
    return _report("lower_algorithmic", tau=tau, hard=inp.C * a,
                   soft=inp.C * math.sqrt(tau * a))


UPPER_BOUNDS = (bound_bst_hard, bound_bst_soft, bound_bm, bound_mcallester,
                bound_main, bound_combined)
LOWER_BOUNDS = (lower_existential, lower_algorithmic)


def compare_all(inp: BoundInputs, tau: float | None = None) -> list[BoundReport]:
    """Every evaluator on one input, sorted by value (ties by name).

    ``tau`` feeds the two lower bounds and defaults to the in-sample loss ``L``.
    """
    tau = inp.L if tau is None else tau
    rows = [f(inp) for f in UPPER_BOUNDS] + [f(inp, tau) for f in LOWER_BOUNDS]
    return sorted(rows, key=lambda r: (r.value, r.name))
