import math

import pytest
from hypothesis import given, settings, strategies as st

from marginlab.bounds import (BoundInputs, bound_bm, bound_bst_hard, bound_bst_soft,
                              bound_combined, bound_main, bound_mcallester, compare_all,
                              lower_algorithmic, lower_existential, pi_term)

# reference values computed independently at 30 digits
BASE = BoundInputs(R=10, theta=1, m=10_000, delta=1, L=0, C=1)
PI = 0.0921034037197618


def test_pi_term():
    assert pi_term(BASE) == pytest.approx(PI, abs=1e-7)
    assert pi_term(BoundInputs(1, 1, math.e)) == pytest.approx(math.exp(-1), abs=1e-12)


def test_pi_decreasing_in_m():
    vals = [pi_term(BoundInputs(1, 1, m)) for m in range(3, 200)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_bst():
    assert bound_bst_hard(BASE).value == pytest.approx(0.8483036977, abs=1e-9)
    big = BoundInputs(1, 1, 10, delta=math.exp(-100))
    assert bound_bst_hard(big).value == pytest.approx((math.log(10) ** 2 + 100) / 10, rel=1e-12)
    assert bound_bst_hard(BASE.with_(C=0)).value == 0
    assert bound_bst_soft(BASE).value == pytest.approx(0.9210340372, abs=1e-9)
    assert bound_bst_soft(BASE.with_(L=1)).value >= 1
    assert bound_bst_soft(BASE.with_(L=1)).vacuous
    assert bound_bst_soft(BASE.with_(C=0, L=0.3)).value == 0.3


def test_bm():
    assert bound_bm(BASE.with_(L=0.5, delta=math.exp(-1))).value == pytest.approx(
        0.5 + math.sqrt(101 / 1e4), abs=1e-12)
    assert bound_bm(BASE.with_(delta=math.exp(-1))).value == pytest.approx(0.100499, abs=1e-6)
    assert bound_bm(BoundInputs(1, 1, 2, L=0.2)).value == pytest.approx(0.2 + math.sqrt(0.5))


def test_mcallester():
    assert bound_mcallester(BASE).value == pytest.approx(0.1224519463, abs=1e-9)
    assert bound_mcallester(BASE.with_(C=0, L=0.4)).value == 0.4
    near = bound_mcallester(BoundInputs(1, 1, 10_000))
    assert near.components["confidence"] > near.components["hard"]


def test_main():
    assert bound_main(BASE).value == pytest.approx(PI, abs=1e-7)
    assert bound_main(BASE.with_(L=0.25)).value == pytest.approx(0.4938461167, abs=1e-9)
    assert bound_main(BoundInputs(1, 1, math.e)).value == pytest.approx(math.exp(-1))


def test_combined():
    assert bound_combined(BASE).value == pytest.approx(PI, abs=1e-12)
    one = BASE.with_(L=1.0)
    expect = 1 + 100 * math.log(1e4) / 1e4 + 10 / 100
    assert bound_combined(one).value == pytest.approx(expect, rel=1e-12)
    assert bound_combined(BASE.with_(L=0.001)).value == pytest.approx(0.1027004, abs=1e-6)


def test_lower_bounds():
    assert lower_existential(BASE, 0).value == pytest.approx(PI, abs=1e-12)
    assert lower_existential(BASE, 1).value == pytest.approx(1 + PI, abs=1e-12)
    assert lower_existential(BASE, math.exp(-1)).value == pytest.approx(0.5206359, abs=1e-7)
    assert lower_algorithmic(BASE, 0).value == pytest.approx(0.01)
    assert lower_algorithmic(BASE, 0.25).value == pytest.approx(0.31)
    scaled = BoundInputs(20, 2, 10_000)
    assert lower_algorithmic(scaled, 0.25).value == pytest.approx(0.31)
    with pytest.raises(ValueError):
        lower_algorithmic(BASE, 1.5)


def test_compare_all_table():
    rows = compare_all(BASE)
    assert len(rows) == 8
    by = {r.name: r.value for r in rows}
    assert by["bound_main"] < by["bound_bst_hard"]
    assert [r.value for r in rows] == sorted(r.value for r in rows)
    half = {r.name: r.value for r in compare_all(BASE.with_(L=0.5))}
    assert half["bound_bm"] == pytest.approx(0.6)
    assert half["bound_main"] == pytest.approx(0.8067000063, abs=1e-9)


def test_input_validation():
    for kw in (dict(R=0), dict(theta=-1), dict(m=1), dict(delta=0), dict(L=1.2), dict(C=-1)):
        args = dict(R=1, theta=1, m=10, delta=0.5, L=0, C=1)
        args.update(kw)
        with pytest.raises(ValueError):
            BoundInputs(**args)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.1, 50), st.floats(0.1, 5), st.floats(2, 1e9), st.floats(1e-6, 1),
       st.floats(0, 1))
def test_bounds_at_least_L_and_scale_invariant(R, theta, m, delta, L):
    inp = BoundInputs(R, theta, m, delta, L)
    for f in (bound_bst_soft, bound_bm, bound_mcallester, bound_main, bound_combined):
        assert f(inp).value >= L
    scaled = BoundInputs(3 * R, 3 * theta, m, delta, L)
    assert bound_main(scaled).value == pytest.approx(bound_main(inp).value, rel=1e-9)
