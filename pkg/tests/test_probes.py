import json
import math
import warnings
from types import SimpleNamespace

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from groundtrace import synth
from groundtrace.probes import (
    DEFAULT_C_GRID,
    FeatureSpec,
    ProbeModel,
    fit_interaction,
    grid_search_C,
    logistic_fit,
    mean_nll,
    penalized_gradient,
    penalized_objective,
    permutation_importance,
    raw_matrix,
    sign_consistency,
    train_probe,
    zscore_apply,
    zscore_fit,
)
from oracles import grid_minimizer, penalized_nll


def test_zscore_example():
    st = zscore_fit([[0.0], [2.0]])
    assert st.mean[0] == 1.0 and st.sd[0] == pytest.approx(math.sqrt(2), abs=1e-15)
    assert zscore_apply(st, [[1.0]])[0, 0] == 0.0


def test_zscore_constant_column_warns_and_zeroes():
    with pytest.warns(RuntimeWarning):
        st = zscore_fit([[3.0, 1.0], [3.0, 2.0], [3.0, 4.0]])
    assert np.all(zscore_apply(st, [[3.0, 0.0], [9.0, 1.0]])[:, 0] == 0.0)


def test_zscore_frozen_stats():
    st = zscore_fit(np.arange(10.0)[:, None])
    test = np.arange(100.0, 110.0)[:, None]
    assert np.allclose(zscore_apply(st, test), (test - 4.5) / np.std(np.arange(10.0), ddof=1))
    with pytest.raises(ValueError):
        zscore_fit([[1.0]])


def test_zero_information_intercept():
    X = np.tile([[-1.0], [1.0]], (40, 1))
    y = np.tile([1, 1, 1, 0, 1, 1, 0, 1], 10).astype(float)
    # Each x value sees a 3:1 split, so the slope carries no information.
    assert y[X[:, 0] == 1].mean() == y[X[:, 0] == -1].mean() == 0.75
    m = logistic_fit(X, y, C=1.0)
    assert abs(m.coefficients[1]) < 1e-9
    assert m.intercept == pytest.approx(math.log(3), abs=1e-9)


def test_matches_sklearn_objective():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 3))
    y = (rng.random(300) < 1 / (1 + np.exp(-(X @ [1.0, -0.5, 0.2])))).astype(float)
    for C in (0.03, 1.0, 10.0):
        ours = logistic_fit(X, y, C)
        ref = LogisticRegression(C=C, tol=1e-12, max_iter=10000).fit(X, y)
        assert ours.coefficients[1:] == pytest.approx(ref.coef_[0], abs=1e-5)
        assert ours.intercept == pytest.approx(ref.intercept_[0], abs=1e-5)


def test_separable_1d_matches_grid_minimizer():
    X = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
    y = np.array([0, 0, 0, 1, 1, 1.0])
    m = logistic_fit(X, y, C=1.0)
    assert 0 < m.coefficients[1] < 10
    ref = grid_minimizer(X[:, None], y, 1.0, center=[0.0, 2.0])
    assert np.abs(m.coefficients - ref).max() < 1e-3
    assert m.grad_norm <= 1e-8


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 2))
    y = (rng.random(80) < 0.4).astype(float)
    beta = rng.normal(size=3)
    g = penalized_gradient(beta, X, y, 0.3)[0]
    h = 1e-6
    fd = np.array([(penalized_nll(beta + h * e, X, y, 0.3) - penalized_nll(beta - h * e, X, y, 0.3)) / (2 * h) for e in np.eye(3)])
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-10)
    assert penalized_objective(beta, X, y, 0.3)[0] == pytest.approx(penalized_nll(beta, X, y, 0.3), abs=1e-14)


def test_fit_errors():
    with pytest.raises(ValueError):
        logistic_fit(np.zeros((4, 1)), np.ones(4), 1.0)
    with pytest.raises(ValueError):
        logistic_fit(np.zeros((4, 1)), np.array([0, 1, 0, 1.0]), 0.0)


def test_penalized_nll_never_above_trivial_model():
    rng = np.random.default_rng(3)
    for s in range(20):
        X = rng.normal(size=(60, 2))
        y = (rng.random(60) < 0.5).astype(float)
        y[:2] = [0, 1]
        m = logistic_fit(X, y, C=float(rng.choice(DEFAULT_C_GRID)))
        assert m.nll <= penalized_nll(np.zeros(3), X, y, m.C) + 1e-15


def test_regularization_monotone():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 3))
    y = (rng.random(200) < 1 / (1 + np.exp(-X @ [2.0, -1.0, 0.5]))).astype(float)
    norms = [np.linalg.norm(logistic_fit(X, y, C).coefficients[1:]) for C in sorted(DEFAULT_C_GRID, reverse=True)]
    assert all(a >= b - 1e-9 for a, b in zip(norms, norms[1:]))


def test_grid_search_singleton_and_noise():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 2))
    y = (rng.random(50) < 0.5).astype(float)
    assert grid_search_C(X, y, [0.7]) == 0.7
    smallest = 0
    for s in range(50):
        r = np.random.default_rng([5, s])
        X = r.normal(size=(120, 2))
        y = (r.random(120) < 0.5).astype(float)
        smallest += grid_search_C(X, y, seed=s) == min(DEFAULT_C_GRID)
    assert smallest > 25


def test_grid_search_strong_signal():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(600, 2))
    y = (rng.random(600) < 1 / (1 + np.exp(-3 * X[:, 0]))).astype(float)
    Xt = rng.normal(size=(4000, 2))
    yt = (rng.random(4000) < 1 / (1 + np.exp(-3 * Xt[:, 0]))).astype(float)
    best = grid_search_C(X, y, seed=1)
    losses = {C: mean_nll(logistic_fit(X, y, C).predict_proba(Xt), yt) for C in DEFAULT_C_GRID}
    assert losses[best] <= min(losses.values()) + 0.01


def test_grid_search_all_folds_single_class():
    with pytest.raises(ValueError):
        # Both rows land in the first fold, so no fold has a two-class training split.
        grid_search_C(np.zeros((2, 1)), np.array([0, 1.0]), folds=2, seed=0)


def test_interaction_columns():
    spec = FeatureSpec.for_level("interaction")
    assert spec.columns == ("E_z", "V_z", "E_z*V_z", "L_z")
    z = np.array([[-1.0, -2.0, 0.5]])
    assert spec.design(z).tolist() == [[-1.0, -2.0, 2.0, 0.5]]
    with pytest.raises(ValueError):
        FeatureSpec.for_level("bogus")


def test_confident_blind_penalty_algebra():
    m = ProbeModel(np.array([0.0, -0.5, 0.5, -0.6, 0.0]), 1.0, FeatureSpec.for_level("interaction"))
    no_int = ProbeModel(np.array([0.0, -0.5, 0.5, 0.0, 0.0]), 1.0, FeatureSpec.for_level("interaction"))
    d = FeatureSpec.for_level("interaction").design(np.array([[-1.0, -1.5, 0.0]]))
    assert m.logit(d)[0] < no_int.logit(d)[0]


def test_interaction_recovery_single_seed():
    rows = synth.generate_feature_table(synth.SynthConfig(seed=11, n=2000, pattern="moderate"))
    rep = fit_interaction(rows, B=200, seed=11)
    assert rep.beta_EV < 0 and abs(rep.beta_EV + 0.6) < 0.25
    assert rep.ci[0] <= rep.beta_EV <= rep.ci[1]
    assert rep.n == 2000


def test_interaction_bootstrap_matches_explicit_resampling():
    rows = synth.generate_feature_table(synth.SynthConfig(seed=3, n=300, pattern="moderate"))
    rep = fit_interaction(rows, B=5, seed=9)
    spec = FeatureSpec.for_level("interaction")
    design = rep.model.design_from_raw(raw_matrix(rows, spec.base))
    y = np.array([float(r.correct) for r in rows])
    estimates = []
    for b in range(5):
        idx = np.random.default_rng([9, b]).integers(0, 300, 300)
        estimates.append(logistic_fit(design[idx], y[idx], 1.0, spec).coef("E_z*V_z"))
    lo, hi = np.percentile(estimates, [2.5, 97.5])
    assert rep.ci == pytest.approx((lo, hi), abs=1e-7)


def test_interaction_degenerate_cell():
    rows = [r for r in synth.generate_feature_table(synth.SynthConfig(seed=1, n=50)) if r.correct]
    with pytest.raises(ValueError):
        fit_interaction(rows, B=0)


def _toy_records(seed=0, n=400):
    return synth.generate_feature_table(synth.SynthConfig(seed=seed, n=n, pattern="moderate"))


def test_permutation_importance():
    rows = _toy_records()
    y = np.array([float(r.correct) for r in rows])
    model = train_probe(rows, "entropy_plus_vision", seed=0)
    raw = raw_matrix(rows, model.spec.base)
    dead = ProbeModel(model.coefficients.copy(), model.C, model.spec, model.zstats)
    dead.coefficients[2] = 0.0
    assert permutation_importance(dead, raw, y, "V_ans_end", seed=1) == 0.0
    a = permutation_importance(model, raw, y, "H_full", seed=2)
    assert a == permutation_importance(model, raw, y, "H_full", seed=2)


def test_permutation_importance_dominant_feature():
    rng = np.random.default_rng(8)
    rows = []
    for i in range(600):
        e, v = rng.normal(), rng.normal()
        p = 1 / (1 + np.exp(2.5 * e - 0.2 * v))
        rows.append(SimpleNamespace(id=str(i), H_full=e, V_ans_end=v, V_thinking_auc=rng.normal(), correct=rng.random() < p))
    model = train_probe(rows, "entropy_plus_vision", seed=0)
    raw = raw_matrix(rows, model.spec.base)
    y = np.array([float(r.correct) for r in rows])
    assert permutation_importance(model, raw, y, "H_full") > permutation_importance(model, raw, y, "V_ans_end")


def test_sign_consistency():
    spec = FeatureSpec("custom", ("a",))
    pos = [ProbeModel(np.array([0.0, 0.3]), 1.0, spec) for _ in range(10)]
    zero = [ProbeModel(np.array([0.0, 0.0]), 1.0, spec) for _ in range(4)]
    assert sign_consistency(pos, "a") == (10, 0, 0)
    assert sign_consistency(zero, "a") == (0, 0, 4)
    fits = [train_probe(_toy_records(seed=s, n=300), "entropy_only", seed=s) for s in range(10)]
    assert sign_consistency(fits, "H_full")[1] >= 9


def test_json_round_trip():
    model = train_probe(_toy_records(), "full", seed=4)
    again = ProbeModel.from_dict(json.loads(model.to_json()))
    raw = raw_matrix(_toy_records(seed=9, n=50), model.spec.base)
    assert np.array_equal(model.predict_proba_raw(raw), again.predict_proba_raw(raw))
    bad = json.loads(model.to_json())
    bad["schema_version"] = 99
    with pytest.raises(ValueError):
        ProbeModel.from_dict(bad)


def test_tamper_refit_on_test_changes_predictions():
    train = _toy_records(seed=1)
    model = train_probe(train, "entropy_only", seed=0)
    test = [r for r in _toy_records(seed=2) if r.H_full > 0.45]
    raw = raw_matrix(test, model.spec.base)
    frozen = model.predict_proba_raw(raw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tampered = ProbeModel(model.coefficients, model.C, model.spec, zscore_fit(raw))
    assert not np.allclose(frozen, tampered.predict_proba_raw(raw))
    # Scoring never touches the stored statistics.
    assert np.array_equal(model.zstats.mean, train_probe(train, "entropy_only", seed=0).zstats.mean)
