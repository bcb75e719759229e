import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from oracles import pca_oracle, random_instance

from voxelhop.errors import ConfigError, DimensionError, InsufficientDataError
from voxelhop.hop import StageConfig, _windows, fit_stage_bank
from voxelhop.saab import (EnergyPolicy, SaabFilterBank, SaabMoments, apply_saab, dc_complement,
                           energy_curve, fit_saab, select_count)


def test_dc_anchor_n4():
    bank = fit_saab(np.random.default_rng(0).normal(size=(10, 4)))
    np.testing.assert_array_equal(bank.dc_anchor, [0.5, 0.5, 0.5, 0.5])


def test_constant_samples_give_dc_only():
    X = np.outer(np.linspace(-2, 3, 12), np.ones(5))
    bank = fit_saab(X)
    assert bank.F == 1
    assert bank.ac_eigenvalues.size == 0
    assert bank.ac_anchors.shape == (0, 5)


def test_single_ac_direction_recovered():
    rng = np.random.default_rng(7)
    v = np.array([1.0, -2.0, 1.0])  # orthogonal to (1, 1, 1)
    X = rng.normal(size=(200, 1)) * np.ones(3) + rng.normal(size=(200, 1)) * v
    bank = fit_saab(X, EnergyPolicy(0.98))
    assert bank.F == 2
    target = v / np.linalg.norm(v)
    _, V = pca_oracle(X)
    assert min(np.abs(bank.ac_anchors[0] - target).max(), np.abs(bank.ac_anchors[0] + target).max()) < 1e-6
    assert min(np.abs(bank.ac_anchors[0] - V[0]).max(), np.abs(bank.ac_anchors[0] + V[0]).max()) < 1e-6


def test_apply_dc_of_ones():
    n = 9
    Q = dc_complement(n)
    bank = SaabFilterBank(n, Q.T[:3], np.array([3.0, 2.0, 1.0]), 0.0)
    out = apply_saab(bank, np.ones((1, n)))
    assert out[0, 0] == pytest.approx(np.sqrt(n), abs=1e-12)
    np.testing.assert_allclose(out[0, 1:], 0.0, atol=1e-12)


def test_apply_one_dimensional():
    bank = SaabFilterBank(1, np.zeros((0, 1)), np.zeros(0), 2.5)
    np.testing.assert_allclose(apply_saab(bank, np.array([[1.5]])), [[4.0]])


def test_one_dimensional_fit_is_dc_only():
    bank = fit_saab(np.array([[1.0], [-3.0], [2.0]]))
    assert bank.F == 1 and bank.bias == 3.0


def test_apply_rejects_wrong_width():
    bank = fit_saab(np.random.default_rng(0).normal(size=(10, 4)))
    with pytest.raises(DimensionError):
        apply_saab(bank, np.zeros((2, 5)))


def test_needs_two_samples():
    with pytest.raises(InsufficientDataError):
        fit_saab(np.zeros((1, 4)))


def test_policy_validation():
    with pytest.raises(ConfigError):
        EnergyPolicy(0.0)
    with pytest.raises(ConfigError):
        EnergyPolicy(1.2)


def test_energy_curve_arithmetic():
    bank = SaabFilterBank(3, np.zeros((0, 3)), np.zeros(0), 0.0, spectrum=np.array([3.0, 1.0]))
    assert energy_curve(bank) == [(1, 0.75), (2, 1.0)]


def test_energy_curve_prefix_sums(rng):
    spec = np.sort(rng.exponential(size=20))[::-1]
    bank = SaabFilterBank(21, np.zeros((0, 21)), np.zeros(0), 0.0, spectrum=spec)
    fr = [f for _, f in energy_curve(bank)]
    oracle = [sum(spec[: i + 1]) / sum(spec) for i in range(20)]
    np.testing.assert_allclose(fr, oracle, rtol=1e-12)
    assert fr[-1] == 1.0
    assert all(b >= a for a, b in zip(fr, fr[1:]))


def test_select_count_against_loop(rng):
    for _ in range(100):
        w = np.sort(rng.exponential(size=int(rng.integers(1, 15))))[::-1]
        t = float(rng.uniform(0.05, 1.0))
        k = 0
        while sum(w[:k]) < t * sum(w) * (1 - 1e-12):
            k += 1
        assert select_count(w, t) == k


def test_select_count_ties():
    # the second and third eigenvalue are tied; 0.5 is reached exactly after the first
    assert select_count(np.array([2.0, 1.0, 1.0]), 0.5) == 1
    assert select_count(np.array([2.0, 1.0, 1.0]), 0.75) == 2


def test_max_filters_caps_ac_count():
    X = random_instance(3, J=80, n=8)
    assert fit_saab(X, EnergyPolicy(1.0, max_filters=2)).F == 3


def test_sign_convention():
    X = random_instance(11, J=50, n=6)
    bank = fit_saab(X, EnergyPolicy(1.0))
    for a in bank.ac_anchors:
        k = int(np.argmax(np.round(np.abs(a), 12)))
        assert a[k] > 0


def test_ac_eigenvalues_match_oracle_and_descend():
    X = random_instance(5, J=100, n=7)
    bank = fit_saab(X, EnergyPolicy(1.0))
    w, V = pca_oracle(X)
    np.testing.assert_allclose(bank.ac_eigenvalues, w, rtol=1e-8, atol=1e-10)
    assert np.all(np.diff(bank.ac_eigenvalues) <= 0)
    for a, v in zip(bank.ac_anchors, V):
        assert min(np.abs(a - v).max(), np.abs(a + v).max()) < 1e-6


@given(seed=st.integers(0, 2**32 - 1), threshold=st.sampled_from([0.5, 0.9, 0.98, 1.0]))
@settings(max_examples=220, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_saab_algebra_random_instances(seed, threshold):
    X = random_instance(seed)
    J, n = X.shape
    bank = fit_saab(X, EnergyPolicy(threshold))
    A = bank.anchors

    # orthonormal anchors, DC exact
    G = A @ A.T
    assert np.abs(G - np.eye(bank.F)).max() <= 1e-8
    np.testing.assert_array_equal(bank.dc_anchor, np.full(n, 1 / np.sqrt(n)))

    # eigenvalues agree with the oracle; eigenvectors too where the gap is clear
    w, V = pca_oracle(X)
    np.testing.assert_allclose(bank.spectrum, np.where(w > 1e-12 * w[0], w, 0), rtol=1e-8, atol=1e-10 * w[0])
    gaps = np.abs(np.diff(np.concatenate([[np.inf], w[: bank.F], [0]])))
    for f, a in enumerate(bank.ac_anchors):
        if min(gaps[f], gaps[f + 1]) > 1e-3 * w[0]:
            assert min(np.abs(a - V[f]).max(), np.abs(a + V[f]).max()) < 1e-6

    # non-negative responses on training data
    Y = apply_saab(bank, X)
    assert Y.min() >= -1e-9 * max(1.0, bank.bias)

    # reconstruction recovers the projection onto the retained subspace
    x = X[np.random.default_rng(seed).integers(J)]
    coeff = apply_saab(bank, x[None])[0] - bank.bias
    proj = A.T @ (A @ x)
    np.testing.assert_allclose(A.T @ coeff, proj, atol=1e-8 * np.linalg.norm(x), rtol=0)

    # with the full spectrum kept the energy is conserved
    if bank.F == n:
        assert abs((coeff ** 2).sum() - x @ x) <= 1e-8 * (x @ x)

    # determinism
    again = fit_saab(X.copy(), EnergyPolicy(threshold))
    np.testing.assert_array_equal(again.ac_anchors, bank.ac_anchors)
    assert again.bias == bank.bias


def test_full_spectrum_energy_conservation(rng):
    X = random_instance(21, J=200, n=9)
    bank = fit_saab(X, EnergyPolicy(1.0))
    assert bank.F == 9
    C = X @ bank.anchors.T
    np.testing.assert_allclose((C ** 2).sum(axis=1), (X ** 2).sum(axis=1), rtol=1e-8)


def test_bias_is_max_training_norm():
    X = random_instance(8, J=30, n=5)
    assert fit_saab(X).bias == pytest.approx(np.linalg.norm(X, axis=1).max(), rel=1e-15)


def test_streaming_moments_match_batch(rng):
    X = random_instance(4, J=300, n=6) + 1e4  # a large common offset
    m = SaabMoments(6)
    for chunk in np.array_split(X, 7):
        m.update(chunk)
    ref = np.cov(X.T, bias=True)
    np.testing.assert_allclose(m.covariance, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())
    m2 = SaabMoments(6).update(X[:100]).merge(SaabMoments(6).update(X[100:]))
    np.testing.assert_allclose(m2.covariance, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())
    assert m.max_norm == np.linalg.norm(X, axis=1).max()


def test_stage_bank_pools_windows_across_samples(rng):
    cfg = StageConfig(s=2, v=2, energy=EnergyPolicy(1.0))
    slabs = [rng.normal(size=(5, 5, 4, 1)) for _ in range(3)]
    bank = fit_stage_bank(slabs, cfg)
    ref = fit_saab(np.vstack([_windows(s, cfg) for s in slabs]), EnergyPolicy(1.0))
    assert bank.F == ref.F
    np.testing.assert_allclose(bank.ac_eigenvalues, ref.ac_eigenvalues, rtol=1e-10)
    np.testing.assert_allclose(np.abs(bank.ac_anchors @ ref.ac_anchors.T), np.eye(bank.F - 1), atol=1e-8)
