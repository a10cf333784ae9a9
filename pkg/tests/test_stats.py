import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from statsmodels.stats.proportion import proportion_confint

from marginlab.stats import TrialRecord, estimate_from_counts, mean_and_se, wilson_interval


@given(st.integers(1, 5000), st.data())
def test_wilson_matches_reference(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    ref_lo, ref_hi = proportion_confint(k, n, alpha=0.05, method="wilson")
    assert lo == pytest.approx(max(0.0, ref_lo), abs=1e-9)
    assert hi == pytest.approx(min(1.0, ref_hi), abs=1e-9)
    est = estimate_from_counts(k, n)
    assert 0 <= est.lower <= est.point <= est.upper <= 1


def test_wilson_edges_and_width():
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == 1.0
    widths = [np.subtract(*wilson_interval(n // 2, n)[::-1]) for n in (10, 100, 1000)]
    assert widths[0] > widths[1] > widths[2]
    with pytest.raises(ValueError):
        wilson_interval(0, 0)
    assert math.isnan(estimate_from_counts(0, 0).point)


def test_mean_and_se():
    m, se = mean_and_se([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(math.sqrt(1 / 3))
    assert mean_and_se([5.0]) == (5.0, 0.0)


def test_trial_record_gap():
    r = TrialRecord(0, 1, 0.25, 0.5, True)
    assert r.gap == 0.25
    with pytest.raises(ValueError):
        TrialRecord(0, 1, 0.25, 0.5, True, gap=0.3)
