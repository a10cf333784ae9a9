import numpy as np
import pytest

from marginlab.core import (Hyperplane, LabeledExample, RngStream, Sample, SparseVector,
                            empirical_margin_loss, margin, sample_from)
from marginlab.constructions import adversary_params, build_adversarial, run_adversary_game
from marginlab.svm import (TrainConfig, TrainingDiverged, load_model, margin_profile,
                           normalize, save_model, svm_learner, train_soft_margin)


def ex(x, y):
    return LabeledExample(SparseVector.from_dense(x), y)


PAIR = Sample([ex([1.0], 1), ex([-1.0], -1)])


def separable(gamma=0.2, n=400, seed=1):
    rng = np.random.default_rng(seed)
    w_star = np.array([0.6, 0.8, 0.0])
    X = rng.uniform(-1, 1, (n, 3))
    s = X @ w_star
    keep = np.abs(s) >= gamma
    return Sample([ex(x, int(np.sign(v))) for x, v in zip(X[keep], s[keep])])


def test_symmetric_pair():
    w = train_soft_margin(PAIR).w
    assert w.dense()[0] > 0
    u = normalize(w)
    assert all(margin(u, e) == pytest.approx(1.0) for e in PAIR)


def test_lambda_zero_reaches_unit_norm_solution():
    res = train_soft_margin(PAIR, TrainConfig(lam=0.0))
    # the hard-margin solution is w = 1; a subgradient step can overshoot by one step
    assert 1.0 <= res.w.norm <= 1.0 + 0.1
    assert res.final_objective == 0.0
    small = train_soft_margin(PAIR, TrainConfig(lam=0.01))
    assert small.w.norm == pytest.approx(1.0, abs=1e-3)
    assert small.final_objective == pytest.approx(0.01 / 2, rel=1e-3)


def test_duplicated_sample_same_w():
    S = separable()
    a = normalize(train_soft_margin(S).w).dense()
    b = normalize(train_soft_margin(S + S).w).dense()
    assert np.allclose(a, b, atol=1e-6)


def test_objective_nonincreasing_after_averaging():
    tr = np.array(train_soft_margin(separable(), TrainConfig(lam=0.001)).objective)
    blocks = tr[: len(tr) // 10 * 10].reshape(-1, 10).mean(axis=1)
    assert np.all(np.diff(blocks) <= 1e-12)


def test_separable_half_margin():
    S = separable(gamma=0.2)
    w = normalize(train_soft_margin(S).w)
    assert empirical_margin_loss(S, w, 0.1) == 0


def test_config_validation_and_divergence():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(eta0=0)
    with pytest.raises(ValueError):
        train_soft_margin(Sample([]))
    big = Sample([ex([1e200], 1), ex([-1e200], -1)])
    with pytest.raises(TrainingDiverged):
        train_soft_margin(big, TrainConfig(lam=1.0, eta0=1e10))


def test_normalize_examples():
    w = Hyperplane.from_dense([3.0, 4.0])
    u = normalize(w)
    assert np.allclose(u.dense(), [0.6, 0.8])
    e = ex([1.0, 2.0], 1)
    assert margin(u, e) == pytest.approx(margin(w, e) / 5)
    assert np.allclose(normalize(u).dense(), u.dense(), atol=1e-12)
    with pytest.raises(ValueError):
        normalize(Hyperplane(SparseVector(2)))


def test_margin_profile_examples():
    S = Sample([ex([1.0, 0], 1), ex([0.4, 0], 1), ex([1.0, 0], 1), ex([0.3, 0], -1)])
    prof = margin_profile(S, Hyperplane.from_dense([1.0, 0.0]))
    assert prof.loss(0.5) == 0.5
    assert prof.loss(-1.0) == 0.0
    assert prof.loss(2.0) == 1.0
    with pytest.raises(ValueError):
        margin_profile(S, Hyperplane.from_dense([3.0, 0.0]))


def test_margin_profile_matches_loss():
    S = separable()
    w = normalize(train_soft_margin(S).w)
    prof = margin_profile(S, w)
    rng = RngStream(0)
    thetas = np.concatenate([rng.uniform(0, 1.2, 990), np.asarray(prof.margins[:10]).clip(0)])
    for th in thetas:
        for mode in ("strict", "weak"):
            assert prof.loss(th, mode) == empirical_margin_loss(S, w, th, mode)


def test_save_load(tmp_path):
    res = train_soft_margin(PAIR)
    save_model(res, tmp_path / "m.model")
    w, meta = load_model(tmp_path / "m.model")
    assert w.weights == res.w.weights
    assert float(meta["lam"]) == 0.01 and meta["schedule"] == "inverse"


def test_svm_as_adversary_learner():
    res = run_adversary_game(svm_learner(TrainConfig(epochs=30)), 4, 1, 0.25, 256, 20, seed=2)
    assert res.k == 16 and len(res.records) == 20
