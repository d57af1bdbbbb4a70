import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import kappa_hand

from mrfseg.core import DomainError, LabelMap
from mrfseg.metrics import (
    CSV_COLUMNS,
    ConfusionMatrix,
    UndefinedKappaError,
    confusion,
    evaluate,
    kappa,
    kappa_interval,
    kappa_variance,
    match_labels,
    normal_quantile,
    overall_accuracy,
    overall_accuracy_percent,
    relative_improvement,
    relative_improvement_from_proportions,
    write_csv,
)
from mrfseg.synth import rng_for

FIXTURE = [[0.4, 0.1], [0.1, 0.4]]
MC_FIXTURES = [
    np.array([[0.4, 0.1], [0.1, 0.4]]),
    np.array([[0.70, 0.05], [0.03, 0.22]]),
    np.array([[0.30, 0.02, 0.03], [0.04, 0.25, 0.01], [0.02, 0.03, 0.30]]),
]


def mc_kappa_variance(p, n, reps=100_000, seed=0):
    """Variance of kappa over multinomial resamples of an n-pixel confusion table."""
    rng = rng_for(seed)
    L = p.shape[0]
    counts = rng.multinomial(n, p.ravel(), size=reps).reshape(reps, L, L) / n
    po = np.trace(counts, axis1=1, axis2=2)
    pe = np.einsum("rk,rk->r", counts.sum(axis=2), counts.sum(axis=1))
    return float(np.var((po - pe) / (1 - pe)))


def test_confusion_identity_is_diagonal_of_frequencies():
    s = np.array([[0, 1, 1], [2, 2, 2]])
    cm = confusion(LabelMap(s, 3), LabelMap(s, 3))
    np.testing.assert_allclose(cm.p, np.diag([1 / 6, 2 / 6, 3 / 6]))
    assert cm.n == 6


def test_confusion_constant_prediction_single_row():
    ref = LabelMap(np.array([[0, 1], [1, 1]]), 2)
    cm = confusion(ref, LabelMap(np.zeros((2, 2), int), 2))
    np.testing.assert_allclose(cm.p, [[0.25, 0.75], [0, 0]])


def test_confusion_one_disagreement_orientation():
    ref = LabelMap(np.array([[0, 0], [1, 1]]), 2)
    pred = LabelMap(np.array([[0, 1], [1, 1]]), 2)
    cm = confusion(ref, pred)
    # predicted 1, reference 0
    np.testing.assert_allclose(cm.p, [[0.25, 0.0], [0.25, 0.5]])


def test_confusion_mismatch():
    with pytest.raises(DomainError):
        confusion(LabelMap(np.zeros((2, 2), int), 2), LabelMap(np.zeros((2, 3), int), 2))
    with pytest.raises(DomainError):
        confusion(LabelMap(np.zeros((2, 2), int), 2), LabelMap(np.zeros((2, 2), int), 3))


def test_confusion_matrix_validation():
    with pytest.raises(DomainError):
        ConfusionMatrix(np.array([[0.5, 0.1], [0.1, 0.1]]), 10)
    with pytest.raises(DomainError):
        ConfusionMatrix(np.array([[1.0]]), 0)


def test_fixture_oa_and_kappa():
    cm = ConfusionMatrix(np.array(FIXTURE), 100)
    assert overall_accuracy(cm) == pytest.approx(0.8)
    assert overall_accuracy_percent(cm) == pytest.approx(80.0)
    assert kappa(cm) == pytest.approx(0.6)
    assert kappa(cm) == pytest.approx(kappa_hand(FIXTURE))


def test_oa_identity_and_majority():
    assert overall_accuracy(ConfusionMatrix(np.diag([0.3, 0.7]), 10)) == 1.0
    assert overall_accuracy(ConfusionMatrix(np.array([[0.0, 0.0], [0.3, 0.7]]), 10)) == pytest.approx(0.7)


def test_kappa_perfect_and_independent():
    assert kappa(ConfusionMatrix(np.diag([0.2, 0.5, 0.3]), 10)) == pytest.approx(1.0)
    r, c = np.array([0.3, 0.7]), np.array([0.6, 0.4])
    assert kappa(ConfusionMatrix(np.outer(r, c), 100)) == pytest.approx(0.0, abs=1e-12)


def test_kappa_undefined():
    with pytest.raises(UndefinedKappaError):
        kappa(ConfusionMatrix(np.array([[1.0, 0.0], [0.0, 0.0]]), 10))


def random_cm(rng, L):
    p = rng.random((L, L)) + np.eye(L) * rng.uniform(0, 3)
    return p / p.sum()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), L=st.integers(2, 5))
def test_kappa_identity_and_permutation_invariance(seed, L):
    rng = rng_for(seed)
    p = random_cm(rng, L)
    cm = ConfusionMatrix(p, 1000)
    pe = float(p.sum(axis=1) @ p.sum(axis=0))
    assert kappa(cm) == pytest.approx((overall_accuracy(cm) - pe) / (1 - pe))
    perm = rng.permutation(L)
    assert kappa(ConfusionMatrix(p[np.ix_(perm, perm)], 1000)) == pytest.approx(kappa(cm))


def test_variance_formula_literal():
    p = MC_FIXTURES[2]
    n = 5000
    k = kappa_hand(p)
    row, col = p.sum(axis=1), p.sum(axis=0)
    pe = float(row @ col)
    L = p.shape[0]
    a = sum(p[i, i] * (1 - (col[i] + row[i]) * (1 - k)) ** 2 for i in range(L))
    b = (1 - k) ** 2 * sum(p[j, m] * (col[j] + row[m]) ** 2 for j in range(L) for m in range(L) if j != m)
    c = (k - pe * (1 - k)) ** 2
    want = (a + b - c) / (n * (1 - pe) ** 2)
    assert kappa_variance(ConfusionMatrix(p, n)) == pytest.approx(want, rel=1e-12)


def test_perfect_agreement_interval():
    cm = ConfusionMatrix(np.array([[0.5, 0.0], [0.0, 0.5]]), 10_000)
    r = kappa_interval(cm)
    # first term: 2 * 0.5 * (1 - 1*0)^2 = 1, cross term 0, last (1 - 0)^2 = 1 -> variance 0
    assert r.kappa == pytest.approx(1.0)
    assert r.variance == pytest.approx(0.0, abs=1e-15)
    assert r.ci_low == pytest.approx(1.0) and r.ci_high == pytest.approx(1.0)


def test_fixture_interval_against_monte_carlo():
    n = 241 * 241
    cm = ConfusionMatrix(np.array(FIXTURE), n)
    r = kappa_interval(cm)
    mc = mc_kappa_variance(np.array(FIXTURE), n)
    assert r.variance == pytest.approx(mc, rel=0.10)
    z = normal_quantile(0.975)
    assert r.ci_high - r.ci_low == pytest.approx(2 * z * math.sqrt(r.variance))
    assert r.ci_low <= r.kappa <= r.ci_high
    assert r.half_width == pytest.approx(z * r.sigma)


def test_variance_scales_inverse_n():
    p = np.array(FIXTURE)
    assert kappa_variance(ConfusionMatrix(p, 2000)) == pytest.approx(kappa_variance(ConfusionMatrix(p, 1000)) / 2)


def test_interval_width_rate():
    p = MC_FIXTURES[1]
    widths = [kappa_interval(ConfusionMatrix(p, n)).half_width for n in (10**2, 10**4, 10**6)]
    assert widths[0] / widths[1] == pytest.approx(10.0)
    assert widths[1] / widths[2] == pytest.approx(10.0)


def test_interval_argument_checks():
    cm = ConfusionMatrix(np.array(FIXTURE), 100)
    with pytest.raises(DomainError):
        kappa_interval(cm, alpha=1.5)
    with pytest.raises(DomainError):
        kappa_interval(ConfusionMatrix(np.array(FIXTURE), 1))


def test_normal_quantile():
    assert normal_quantile(0.975) == pytest.approx(1.959963985, abs=1e-8)
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-12)
    assert normal_quantile(0.995) == pytest.approx(2.575829304, abs=1e-8)


def test_relative_improvement_basics():
    assert relative_improvement(85.0, 85.0) == 0.0
    assert relative_improvement(100.0, 85.0) == pytest.approx(100.0)
    assert relative_improvement(80.0, 85.0) < 0
    assert relative_improvement_from_proportions(0.9, 0.8) == pytest.approx(50.0)
    with pytest.raises(DomainError):
        relative_improvement(100.0, 100.0)


@pytest.mark.parametrize("ri", [37.1096, 38.0894])
def test_relative_improvement_logo_reference_values(ri):
    # any baseline paired with the matching method accuracy gives it back
    for oa_ml in (70.0, 81.37, 92.5):
        oa_method = oa_ml + ri * (100 - oa_ml) / 100
        assert relative_improvement(oa_method, oa_ml) == pytest.approx(ri, abs=1e-9)


def test_match_labels_permutation():
    ref = LabelMap(np.array([[0, 0, 1], [1, 2, 2]]), 3)
    pred = LabelMap(np.array([[2, 2, 0], [0, 1, 1]]), 3)
    assert np.array_equal(match_labels(ref, pred).labels, ref.labels)


def test_match_labels_many_classes():
    rng = rng_for(3)
    L = 10
    ref = rng.integers(0, L, (20, 20))
    perm = rng.permutation(L)
    out = match_labels(LabelMap(ref, L), LabelMap(perm[ref], L))
    assert np.array_equal(out.labels, ref)


def test_evaluate_and_csv(tmp_path):
    ref = LabelMap(np.array([[0, 0], [1, 1]]), 2)
    rows = [evaluate("same", ref, ref), evaluate("ml", ref, LabelMap(np.array([[0, 1], [1, 1]]), 2), baseline_oa=0.5)]
    assert rows[0].oa == 1.0 and rows[0].kappa.kappa == pytest.approx(1.0)
    assert rows[1].ri == pytest.approx(50.0)
    path = tmp_path / "out.csv"
    write_csv(rows, path)
    with open(path) as fh:
        got = list(csv.reader(fh))
    assert tuple(got[0]) == CSV_COLUMNS
    assert got[1][0] == "same" and float(got[1][1]) == 1.0 and got[1][6] == ""
    assert float(got[2][6]) == pytest.approx(50.0)
