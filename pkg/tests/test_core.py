import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marginlab.core import (STRICT, WEAK, DimensionError, FiniteDistribution, Hyperplane,
                            LabeledExample, RngStream, Sample, SparseVector,
                            SpikedUniformDistribution, derive_stream_id, empirical_margin_loss,
                            exact_margin_error, exact_out_of_sample_error, margin, sample_from)


def ex(x, y):
    return LabeledExample(SparseVector.from_dense(x), y)


def test_margin_examples():
    e1 = Hyperplane.from_dense([1.0, 0.0])
    assert margin(e1, ex([1, 0], 1)) == 1.0
    assert margin(e1, ex([0.4, 0], -1)) == pytest.approx(-0.4)


def test_spiked_margin_is_theta():
    R, theta, u = 4.0, 1.0, 10
    D = SpikedUniformDistribution(u, R)
    w = Hyperplane(SparseVector(u + 1, [u], [theta * math.sqrt(2) / R]))
    assert D.atom_margins(w) == pytest.approx(np.full(u, theta), abs=1e-12)
    assert D.atom(3).point.norm() == pytest.approx(R)


def _four_point_sample():
    # margins 1, 0.4, 1, -0.3 under w = e1
    return Sample([ex([1, 0], 1), ex([0.4, 0], 1), ex([1, 0], 1), ex([0.3, 0], -1)])


def test_empirical_margin_loss_hand_count():
    w = Hyperplane.from_dense([1.0, 0.0])
    assert empirical_margin_loss(_four_point_sample(), w, 0.5) == 0.5


def test_loss_above_radius_weak_is_one():
    w = Hyperplane.from_dense([0.6, 0.8])
    S = _four_point_sample()
    assert empirical_margin_loss(S, w, 1.5, WEAK) == 1.0


def test_margins_equal_theta_strict_zero_weak_one():
    w = Hyperplane.from_dense([0.5, 0.0])
    S = Sample([ex([1, 0], 1), ex([-1, 0], -1)])
    assert empirical_margin_loss(S, w, 0.5, STRICT) == 0.0
    assert empirical_margin_loss(S, w, 0.5, WEAK) == 1.0


def test_loss_errors():
    w = Hyperplane.from_dense([1.0, 0.0])
    with pytest.raises(ValueError):
        empirical_margin_loss(_four_point_sample(), w, -0.1)
    with pytest.raises(ValueError):
        empirical_margin_loss(Sample([]), w, 0.1)


def test_exact_error_examples():
    w = Hyperplane.from_dense([1.0, 0.0])
    single = FiniteDistribution([(ex([1, 0], 1), 1.0)], 1.0)
    assert exact_out_of_sample_error(single, w) == 0.0
    pair = FiniteDistribution([(ex([1, 0], 1), 0.5), (ex([0, 1], 1), 0.5)], 1.0)
    w2 = Hyperplane.from_dense([1.0, -1.0])
    assert exact_out_of_sample_error(pair, w2) == 0.5


def test_distribution_normalization_rules():
    atoms = [(ex([1, 0], 1), 0.5 + 4e-10), (ex([0, 1], 1), 0.5)]
    D = FiniteDistribution(atoms, 1.0)
    assert math.fsum(D.probabilities()) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        FiniteDistribution([(ex([1, 0], 1), 0.6), (ex([0, 1], 1), 0.5)], 1.0)
    with pytest.raises(ValueError):
        FiniteDistribution([(ex([2, 0], 1), 1.0)], 1.0)


def test_sample_from_single_atom_and_determinism():
    D = FiniteDistribution([(ex([1, 0], 1), 1.0)], 1.0)
    S = sample_from(D, 5, RngStream(3))
    assert list(S.atom_indices) == [0] * 5
    D4 = FiniteDistribution([(ex(np.eye(4)[i], 1), 0.25) for i in range(4)], 1.0)
    a = sample_from(D4, 1000, RngStream.derive(11, "t"))
    b = sample_from(D4, 1000, RngStream.derive(11, "t"))
    assert np.array_equal(a.atom_indices, b.atom_indices)


def test_sample_frequencies_uniform():
    D4 = FiniteDistribution([(ex(np.eye(4)[i], 1), 0.25) for i in range(4)], 1.0)
    S = sample_from(D4, 10_000, RngStream(5))
    freq = np.bincount(S.atom_indices, minlength=4) / S.m
    sigma = math.sqrt(0.25 * 0.75 / S.m)
    assert np.all(np.abs(freq - 0.25) <= 3 * sigma)


def test_exact_error_matches_monte_carlo():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(6, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    probs = rng.dirichlet(np.ones(6))
    D = FiniteDistribution([(ex(p, 1 if i % 2 else -1), q) for i, (p, q) in enumerate(zip(pts, probs))], 1.0)
    w = Hyperplane.from_dense([0.3, -0.5, 0.2])
    exact = exact_out_of_sample_error(D, w)
    n = 100_000
    S = sample_from(D, n, RngStream(8))
    mc = float(np.mean(S.margins(w) <= 0))
    assert abs(mc - exact) <= 4 * math.sqrt(exact * (1 - exact) / n)


def test_spiked_grouped_mass_matches_brute_force():
    D = SpikedUniformDistribution(50, 2.0)
    w = Hyperplane(SparseVector(51, [3, 7, 50], [-0.9, 0.1, 0.5]))
    brute = sum(p for e, p in D.atoms() if e.label * e.point.dot(w.weights) < 0.6)
    assert exact_margin_error(D, w, 0.6) == pytest.approx(brute, abs=1e-15)


def test_sparse_vector_basics():
    v = SparseVector(5, [3, 1], [2.0, 0.0])
    assert v.nnz == 1 and v.entries() == [(3, 2.0)]
    with pytest.raises(ValueError):
        SparseVector(5, [1, 1], [1.0, 2.0])
    with pytest.raises(DimensionError):
        v.dot(SparseVector(4))
    with pytest.raises(AttributeError):
        v.dim = 3
    assert pickle.loads(pickle.dumps(v)) == v


def test_stream_ids_differ_and_spawn_is_stable():
    assert derive_stream_id(1, "a", 0) != derive_stream_id(1, "a", 1)
    r = RngStream(9)
    first = r.spawn("x").random(3)
    r.random(100)
    assert np.array_equal(first, r.spawn("x").random(3))


def test_normalized_zero_raises():
    with pytest.raises(ValueError):
        Hyperplane(SparseVector(3)).normalized()


vecs = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=60, deadline=None)
@given(vecs, vecs)
def test_normalize_scales_margin(w, x):
    h = Hyperplane.from_dense(w)
    if h.norm < 1e-6:
        return
    e = ex(x, 1)
    assert margin(h.normalized(), e) == pytest.approx(margin(h, e) / h.norm, rel=1e-9, abs=1e-12)
    assert h.normalized().norm <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=5, max_size=20), st.floats(0, 1),
       st.floats(0, 1))
def test_loss_monotone_in_theta(xs, a, b):
    S = Sample([ex([x], 1) for x in xs])
    w = Hyperplane.from_dense([1.0])
    lo, hi = sorted((a, b))
    for mode in (STRICT, WEAK):
        assert empirical_margin_loss(S, w, lo, mode) <= empirical_margin_loss(S, w, hi, mode)
