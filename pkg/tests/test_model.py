import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pairwise_auc

from voxelhop.config import RunConfig
from voxelhop.errors import ConfigError, DimensionError, InsufficientDataError
from voxelhop.hop import StageConfig, fit_cascade
from voxelhop.lag import affine_lstsq, apply_lag, fit_lag
from voxelhop.model import (TrainedModel, _fit_module1, accuracy, auc, best_threshold_accuracy,
                            count_parameters, fit, fit_fold, fold_seed, loocv, predict, roc)
from voxelhop.saab import EnergyPolicy, SaabFilterBank
from voxelhop.select import aggregate, score_features, select_top
from voxelhop.serialize import dumps
from voxelhop.synth import SynthSpec, generate
from voxelhop.tensor import AggregationSpec


def tiny_config(L=1, keep=1.0):
    return RunConfig(stages=[StageConfig(3, 2, EnergyPolicy(0.95), "horizontal"),
                             StageConfig(2, 2, EnergyPolicy(0.95), "none")],
                     aggregation=[AggregationSpec(2, 2), AggregationSpec(mode="global")],
                     keep_fraction=keep, L=L)


def tiny_data(n_controls=2, n_patients=2, amplitude=8.0, seed=0):
    spec = SynthSpec(S=12, K=7, C=2, n_controls=n_controls, n_patients=n_patients,
                     signal_amplitude=amplitude, seed=seed)
    return generate(spec)


# -- metrics -----------------------------------------------------------------------

def test_auc_perfect_and_ties():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([3.0] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0


def test_auc_requires_both_classes():
    with pytest.raises(InsufficientDataError):
        auc([0.1, 0.2], [1, 1])


@given(n=st.integers(2, 200), seed=st.integers(0, 2**32 - 1), ties=st.booleans())
@settings(max_examples=120, deadline=None)
def test_auc_equals_pairwise_oracle(n, seed, ties):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    scores = rng.integers(0, 5, size=n).astype(float) if ties else rng.normal(size=n)
    assert abs(auc(scores, labels) - pairwise_auc(scores, labels)) <= 1e-12


def test_roc_is_monotone_staircase(rng):
    s, y = rng.normal(size=40), rng.integers(0, 2, size=40)
    y[:2] = [0, 1]
    pts = roc(s, y)
    assert tuple(pts[0, :2]) == (0.0, 0.0) and np.isinf(pts[0, 2])
    assert tuple(pts[-1, :2]) == (1.0, 1.0)
    assert np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)
    assert np.all(np.diff(pts[1:, 2]) < 0)
    # trapezoid area of the staircase equals the AUC
    area = np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2)
    assert area == pytest.approx(auc(s, y), abs=1e-12)


def test_optimal_threshold_accuracy_dominates_zero(rng):
    for _ in range(50):
        s, y = rng.normal(size=25), rng.integers(0, 2, size=25)
        best, t = best_threshold_accuracy(s, y)
        assert best >= accuracy(s, y, 0.0)
        assert accuracy(s, y, t) == best


# -- fit / predict -----------------------------------------------------------------

def test_training_accuracy_on_separable_set(ci):
    spec = SynthSpec(S=28, K=8, C=3, n_controls=20, n_patients=20, signal_amplitude=3.0, seed=11)
    vols, y = generate(spec)
    model = fit(vols, y, ci)
    labels = [predict(model, v)[1] for v in vols]
    assert labels == y.tolist()
    assert model.weights.shape == (6 * 3 + 1,)


def test_zero_weights_always_negative(small_model, small_data):
    z = TrainedModel(small_model.cascade, small_model.masks, small_model.lags,
                     np.zeros_like(small_model.weights), 0.0, small_model.config)
    assert all(predict(z, v) == (0.0, 0) for v in small_data[0])


def test_predict_independent_of_batch(small_model, small_data, ci):
    vols, y = small_data
    _, agg = _fit_module1(vols, ci)
    batch = []
    for i, (mask, unit) in enumerate(zip(small_model.masks, small_model.lags)):
        X = np.stack([mask.apply(agg[i][j]) for j in range(len(vols))])
        batch.append(apply_lag(unit, X))
    Z = np.hstack(batch)
    batch_scores = Z @ small_model.weights[:-1] + small_model.weights[-1]
    single = np.array([small_model.score(v) for v in vols])
    np.testing.assert_allclose(single, batch_scores, rtol=1e-10, atol=1e-12)


def test_single_stage_keep_all_equals_hand_composition():
    vols, y = tiny_data(4, 4, seed=2)
    cfg = RunConfig(stages=[StageConfig(3, 2, EnergyPolicy(0.95), "none")],
                    aggregation=[AggregationSpec(2, 5, partial=True)], keep_fraction=1.0, L=2, seed=4)
    model = fit(vols, y, cfg)
    cascade = fit_cascade(vols, cfg.stages)
    from voxelhop.hop import apply_cascade

    agg = [[aggregate(o, cfg.aggregation[0]) for o in apply_cascade(cascade, v)[0]] for v in vols]
    scores = [score_features(np.stack([a[c] for a in agg]), y) for c in range(2)]
    mask = select_top(scores, 1.0)
    X = np.stack([mask.apply(a) for a in agg])
    unit = fit_lag(X, y, L=2, omega=10.0, seed=4, key=(0,))
    w = affine_lstsq(apply_lag(unit, X), np.where(y == 1, 1.0, -1.0)[:, None])[0]
    for v, x in zip(vols, X):
        expect = apply_lag(unit, x)[0] @ w[:-1] + w[-1]
        assert model.score(v) == pytest.approx(expect, rel=1e-10, abs=1e-12)


def test_keep_all_mask_matches_unmasked_pipeline():
    vols, y = tiny_data(4, 4, seed=5)
    cfg = tiny_config(L=2, keep=1.0)
    model = fit(vols, y, cfg)
    _, agg = _fit_module1(vols, cfg)
    for i, unit in enumerate(model.lags):
        # keeping everything only reorders the planes by score
        kept = [sorted(k.tolist()) for k in model.masks[i].kept]
        assert kept == [list(range(a.shape[2])) for a in agg[i][0]]
        plain = np.stack([np.concatenate([a.ravel() for a in agg[i][j]]) for j in range(len(vols))])
        masked = np.stack([model.masks[i].apply(agg[i][j]) for j in range(len(vols))])
        other = fit_lag(plain, y, 2, 10.0, seed=cfg.seed, key=(i,))
        np.testing.assert_allclose(apply_lag(other, plain), apply_lag(unit, masked), rtol=0, atol=1e-9)


def test_fit_rejects_bad_inputs(ci):
    vols, y = tiny_data(3, 3)
    with pytest.raises(InsufficientDataError):
        fit(vols, np.ones(6, int), tiny_config())
    with pytest.raises(DimensionError):
        fit(vols, y[:-1], tiny_config())
    with pytest.raises(InsufficientDataError):
        fit(vols, y, tiny_config(L=4))
    with pytest.raises(ConfigError):
        RunConfig(stages=[], aggregation=[])
    with pytest.raises(ConfigError):
        fit(vols, y, ci)  # 12x12 is too small for the 28x28 preset
    with pytest.raises(DimensionError):
        fit(vols[:-1] + [np.zeros((12, 12, 8, 2))], y, tiny_config())


def test_predict_rejects_wrong_dims(small_model):
    with pytest.raises(DimensionError):
        predict(small_model, np.zeros((28, 28, 9, 3)))


def test_label_blindness_of_cascade():
    vols, y = tiny_data(4, 4, seed=7)
    a = fit(vols, y, tiny_config(L=2))
    b = fit(vols, np.random.default_rng(0).permutation(y), tiny_config(L=2))
    for sa, sb in zip(a.cascade.banks, b.cascade.banks):
        for ba, bb in zip(sa, sb):
            assert ba.ac_anchors.tobytes() == bb.ac_anchors.tobytes()
            assert ba.bias == bb.bias


# -- parameter accounting ----------------------------------------------------------

def test_single_bank_parameter_arithmetic():
    bank = SaabFilterBank(27, np.zeros((4, 27)), np.ones(4), 1.0)
    assert bank.F * bank.n + 1 == 136


def test_parameter_breakdown(small_model):
    p = count_parameters(small_model)
    saab = sum(b.ac_anchors.size + b.n + 1 for st in small_model.cascade.banks for b in st)
    lag = sum(u.centers.size + u.regression.size for u in small_model.lags)
    assert p["saab"] == saab
    assert p["lag"] == lag
    assert p["classifier"] == 6 * small_model.n_stages + 1
    assert p["total"] == p["saab"] + p["lag"] + p["classifier"]


# -- leave-one-out -----------------------------------------------------------------

def test_loocv_four_samples_separable():
    vols, y = tiny_data(2, 2, amplitude=10.0)
    rep = loocv(vols, y, tiny_config(L=1))
    assert len(rep.scores) == 4
    assert rep.accuracy == 1.0 and rep.auc == 1.0


def test_loocv_fold_count_and_determinism():
    vols, y = tiny_data(4, 4, seed=1)
    a = loocv(vols, y, tiny_config(L=2), repeats=2)
    b = loocv(vols, y, tiny_config(L=2), repeats=2, threads=2)
    assert len(a.scores) == len(vols) == a.to_dict()["n_folds"]
    assert a.repeat_scores == b.repeat_scores
    d = a.to_dict()
    for k in ("accuracy_mean", "accuracy_std", "auc_mean", "auc_std"):
        assert k in d
    assert d["repeats"] == 2


def test_loocv_keep_sweep_shares_cascade():
    vols, y = tiny_data(4, 4, seed=1)
    sweep = loocv(vols, y, tiny_config(L=2), keep_fractions=[0.5, 1.0])
    single = loocv(vols, y, tiny_config(L=2, keep=0.5))
    assert sweep[0.5].scores == single.scores


def test_fold_seeds_are_distinct():
    seeds = {fold_seed(0, r, f) for r in range(5) for f in range(46)}
    assert len(seeds) == 5 * 46
    assert fold_seed(0, 1, 2) == fold_seed(0, 1, 2)


def test_loo_purity_held_out_sample_never_used():
    vols, y = tiny_data(4, 4, seed=9)
    fold = 3
    corrupted = list(vols)
    corrupted[fold] = np.random.default_rng(1).normal(size=vols[fold].shape) * 50
    a = fit_fold(vols, y, fold, tiny_config(L=2), keep_models=True)
    b = fit_fold(corrupted, y, fold, tiny_config(L=2), keep_models=True)
    assert dumps(a.models[0]) == dumps(b.models[0])
    assert a.scores != b.scores
