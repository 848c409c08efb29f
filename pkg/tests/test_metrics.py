import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfaudit.exceptions import MetricError
from cfaudit.explanations import Explanation, ExplanationSet
from cfaudit.metrics import (DisagreementMatrix, FeatureSpace, coverage_by_method, feature_disagreement,
                             group_disagreement, jaccard, pairwise_matrix, probe, probe_index,
                             relative_feature_exclusion, relative_feature_span, scaled_l0, sparsity,
                             sparsity_by_method)


def bits(s):
    return sum(1 << j for j in s)


def pop(x):
    return bin(x).count("1")


def E(method, feats, found=True, oid="1", group="Other"):
    return Explanation(method, oid, frozenset(feats), found, group)


# --------------------------------------------------------------------------
# worked example


def test_worked_example(adult_example):
    by = {r.method: r for r in adult_example.records}
    cf, wit = by["CFproto"], by["WIT"]
    assert relative_feature_span([cf, wit], 14) == 12 / 14
    assert relative_feature_exclusion([cf, wit], 14) == 9 / 14
    assert scaled_l0(cf, wit, 14) == 5 / 14
    assert feature_disagreement(cf, wit) == 0.5
    assert feature_disagreement(wit, cf) == 2 / 7
    assert relative_feature_span(adult_example.records, 14) == 13 / 14
    assert relative_feature_exclusion(adult_example.records, 14) == 1.0


def test_probe_witnesses(adult_example, adult_names):
    sex, hours, loss = (adult_names.index(n) for n in ("Sex", "Hours per week", "Capital loss"))
    r = probe(adult_example.records, sex, "exclude", 14)
    assert r.possible and {"DiCE", "NICE(plaus)", "NICE(spars)"} <= set(r.witnesses)
    assert "CBR" not in r.witnesses
    assert set(probe(adult_example.records, hours, "include", 14).witnesses) == {"CFproto", "NICE(none)", "NICE(plaus)"}
    assert not probe(adult_example.records, loss, "include", 14).possible


# --------------------------------------------------------------------------
# oracle equivalence


sets16 = st.integers(min_value=1, max_value=16).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.integers(0, (1 << n) - 1), min_size=1, max_size=6)))


@settings(max_examples=300, deadline=None)
@given(sets16)
def test_metrics_match_bit_oracle(case):
    n, masks = case
    full = (1 << n) - 1
    es = [E(f"m{i}", [j for j in range(n) if m >> j & 1]) for i, m in enumerate(masks)]
    union = inter = 0
    inter = full
    for m in masks:
        union |= m
        inter &= m
    excluded = 0
    for m in masks:
        excluded |= full & ~m
    assert relative_feature_exclusion(es, n) == pop(excluded) / n
    assert relative_feature_span(es, n) == pop(union) / n
    a, b = masks[0], masks[-1]
    assert scaled_l0(es[0], es[-1], n) == pop(a & b) / n
    assert sparsity(es[0], n) == pop(a) / n
    if a:
        assert feature_disagreement(es[0], es[-1]) == pop(a & ~b) / pop(a)
    else:
        with pytest.raises(MetricError):
            feature_disagreement(es[0], es[-1])
    if a | b:
        sim, dis = jaccard(es[0], es[-1])
        assert sim == pop(a & b) / pop(a | b) and dis == 1 - pop(a & b) / pop(a | b)
    else:
        with pytest.raises(MetricError):
            jaccard(es[0], es[-1])


def test_jaccard_distance_axioms():
    rng = np.random.default_rng(0)
    masks = rng.integers(0, 1 << 12, size=(10_000, 3))
    for a, b, c in masks:
        sets = [frozenset(j for j in range(12) if int(m) >> j & 1) for m in (a, b, c)]
        if not all(sets):
            continue
        d = lambda x, y: jaccard(x, y)[1]
        A, B, C = sets
        assert d(A, A) == 0
        assert d(A, B) == d(B, A)
        assert (d(A, B) == 0) == (A == B)
        assert d(A, C) <= d(A, B) + d(B, C) + 1e-15


def test_asymmetry_and_bounds():
    a, b = E("a", {0, 1, 2, 3}), E("b", {0})
    assert feature_disagreement(a, b) == 0.75 and feature_disagreement(b, a) == 0.0


def test_missing_explanations_dropped_or_empty():
    es = [E("a", {0, 1}), E("CBR", (), found=False)]
    assert relative_feature_exclusion(es, 4) == 0.5
    assert relative_feature_exclusion(es, 4, missing_as_empty=True) == 1.0
    with pytest.raises(MetricError):
        relative_feature_span([E("CBR", (), found=False)], 4)


def test_feature_space_checks():
    assert len(FeatureSpace.of(["a", "b"])) == 2
    with pytest.raises(MetricError):
        FeatureSpace(0)
    with pytest.raises(MetricError):
        relative_feature_span([E("a", {0})], 0)


def test_probe_validation():
    with pytest.raises(MetricError):
        probe([E("a", {0})], 0, "hide")
    with pytest.raises(MetricError):
        probe([E("a", {0})], 5, "include", n_features=3)


# --------------------------------------------------------------------------
# matrices and aggregates


@pytest.fixture
def small_set():
    s = ExplanationSet("toy", "RF", ["f0", "f1", "f2", "f3"])
    rows = {
        "1": {"P1": {0, 1}, "P2": {0}, "Q1": {3}, "Q2": {2, 3}},
        "2": {"P1": {1}, "P2": {1, 2}, "Q1": {3}, "Q2": set()},
    }
    groups = {"P1": "Plaus", "P2": "Plaus", "Q1": "Prox", "Q2": "Prox"}
    for oid, recs in rows.items():
        for m, f in recs.items():
            s.add(Explanation(m, oid, frozenset(f), bool(f) or m != "Q2", groups[m]))
    return s


def test_pairwise_matrix_skips_undefined(small_set):
    M = pairwise_matrix(small_set, "feature_disagreement")
    # instance 1: |{0,1}\{0}|/2 = 0.5 ; instance 2: |{1}\{1,2}| = 0
    assert M.cell("P1", "P2") == pytest.approx(0.25)
    # Q2 missing on instance 2, so only instance 1 counts
    assert M.cell("Q2", "Q1") == 0.5
    L = pairwise_matrix(small_set, "l0")
    assert L.cell("P1", "P1") == pytest.approx((2 / 4 + 1 / 4) / 2)
    J = pairwise_matrix(small_set, "jaccard_dissim")
    np.testing.assert_allclose(np.diag(J.values), 0)


def test_group_disagreement(small_set):
    g = group_disagreement(small_set, {"P1": "Plaus", "P2": "Plaus", "Q1": "Prox", "Q2": "Prox"})
    M = pairwise_matrix(small_set, "feature_disagreement")
    assert g["P1"].intra == M.cell("P1", "P2")
    assert g["P1"].inter == pytest.approx((M.cell("P1", "Q1") + M.cell("P1", "Q2")) / 2)
    with pytest.raises(MetricError, match="at least 2"):
        group_disagreement(small_set, {"P1": "Plaus", "P2": "Prox", "Q1": "Prox", "Q2": "Prox"})
    from_matrix = group_disagreement(M, {"P1": "Plaus", "P2": "Plaus", "Q1": "Prox", "Q2": "Prox"})
    assert from_matrix["Q1"] == g["Q1"]


def test_group_disagreement_ignores_other(small_set):
    s = ExplanationSet("toy", "RF", small_set.feature_names, small_set.records)
    s.add(Explanation("SHAP", "1", frozenset({0, 1, 2}), True, "Other"))
    g = group_disagreement(s, {**small_set.groups, "SHAP": "Other"})
    assert "SHAP" not in g


def test_sparsity_coverage_probe_index(small_set):
    assert sparsity_by_method(small_set)["P2"] == pytest.approx((1 / 4 + 2 / 4) / 2)
    assert coverage_by_method(small_set)["Q2"] == 0.5
    idx = probe_index(small_set)
    assert idx["f3"]["includable"] == 1.0 and idx["f0"]["excludable"] == 1.0


def test_matrix_csv_roundtrip(tmp_path, small_set):
    M = pairwise_matrix(small_set, "jaccard_sim")
    M.to_csv(tmp_path / "m.csv", digits=12)
    back = DisagreementMatrix.from_csv(tmp_path / "m.csv", "jaccard_sim")
    assert back.methods == M.methods
    np.testing.assert_allclose(back.values, M.values, atol=1e-12)
    with pytest.raises(MetricError):
        DisagreementMatrix(["a"], [[0]], "cosine")
