import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_auc, brute_ks
from scipy.special import kolmogorov

from portastat.core import HIGH, LOW, DegenerateLabels, EmptySample, FeatureKind, ScoredSet, ValidationError
from portastat.metrics import GeneralizationMatrix, auc, ecdf, generalization_matrix, kolmogorov_sf, ks_two_sample

# coarse grid so hypothesis produces plenty of ties
tied_scores = st.integers(0, 6).map(lambda k: k / 6)


@st.composite
def labeled_scores(draw, max_size=40):
    n = draw(st.integers(2, max_size))
    scores = draw(st.lists(tied_scores, min_size=n, max_size=n))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    labels[0], labels[1] = 0, 1
    return scores, labels


def test_auc_examples():
    assert auc([0.1, 0.9], [0, 1]) == 1.0
    assert auc([0.5, 0.5], [0, 1]) == 0.5
    assert auc([0.2, 0.6, 0.4, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_single_class_raises():
    with pytest.raises(DegenerateLabels):
        auc([0.1, 0.2], [1, 1])


@given(labeled_scores())
def test_auc_matches_pairwise_count(data):
    scores, labels = data
    assert auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-12)


@given(labeled_scores(), st.sampled_from([np.exp, np.arctan, lambda x: x**3 + 2 * x, lambda x: -1.0 / (x + 1)]))
def test_auc_invariant_under_increasing_maps(data, fn):
    scores, labels = data
    mapped = fn(np.asarray(scores))
    assert auc(mapped, labels) == pytest.approx(auc(scores, labels), abs=1e-12)


@given(labeled_scores())
def test_auc_of_complement_labels_sums_to_one(data):
    scores, labels = data
    flipped = [1 - y for y in labels]
    assert auc(scores, labels) + auc(scores, flipped) == pytest.approx(1.0, abs=1e-12)


def test_ecdf_examples():
    f = ecdf([5.0])
    assert f(4.999) == 0.0 and f(5.0) == 1.0 and f(7) == 1.0
    g = ecdf([1, 1, 2])
    assert g(1) == pytest.approx(2 / 3) and g(2) == 1.0
    h = ecdf([0.3, 0.1, 0.2])
    assert tuple(h.support) == (0.1, 0.2, 0.3)
    assert np.allclose(h.cumulative, [1 / 3, 2 / 3, 1])
    with pytest.raises(EmptySample):
        ecdf([])


def test_ks_examples():
    same = ks_two_sample([0.1, 0.4, 0.7], [0.1, 0.4, 0.7])
    assert same.statistic == 0.0 and same.p_value == 1.0
    assert ks_two_sample([1, 2, 3], [10, 11, 12]).statistic == 1.0
    assert ks_two_sample([0.1, 0.5], [0.3, 0.7, 0.9]).statistic == pytest.approx(2 / 3, abs=1e-12)
    with pytest.raises(EmptySample):
        ks_two_sample([], [1.0])


@settings(max_examples=60)
@given(st.lists(tied_scores, min_size=1, max_size=60), st.lists(tied_scores, min_size=1, max_size=60))
def test_ks_matches_oracle_and_is_symmetric(a, b):
    ab, ba = ks_two_sample(a, b), ks_two_sample(b, a)
    assert ab.statistic == pytest.approx(brute_ks(a, b), abs=1e-12)
    assert ab.statistic == ba.statistic and ab.p_value == ba.p_value
    assert 0.0 <= ab.statistic <= 1.0 and 0.0 <= ab.p_value <= 1.0
    assert (ab.n_a, ab.n_b) == (len(a), len(b))


@pytest.mark.parametrize("lam", [0.05, 0.3, 0.5, 0.8, 1.0, 1.36, 2.0, 3.5])
def test_kolmogorov_series_matches_scipy(lam):
    assert kolmogorov_sf(lam) == pytest.approx(float(kolmogorov(lam)), abs=1e-9)


def _scored(rows, model_id="m"):
    return ScoredSet.from_entries(model_id, rows)


def test_matrix_identical_inputs_give_equal_rows():
    s = _scored([("a", 0.2, 0, LOW), ("b", 0.7, 1, LOW), ("c", 0.4, 0, HIGH), ("d", 0.3, 1, HIGH)])
    m = generalization_matrix({LOW: s, HIGH: s}, FeatureKind.EKG_LIKE)
    assert m[LOW, LOW] == m[HIGH, LOW] and m[LOW, HIGH] == m[HIGH, HIGH]


def test_matrix_oracle_classifier_is_perfect():
    rows = [(f"{p.value}{i}", float(y), y, p) for p in (LOW, HIGH) for i, y in enumerate((0, 1, 0, 1))]
    s = _scored(rows)
    m = generalization_matrix({LOW: s, HIGH: s}, FeatureKind.EHR_LIKE)
    assert all(v == 1.0 for v in m.cells.values())


def test_matrix_eight_entries_by_hand():
    by_train = {
        LOW: _scored(
            [
                ("l0", 0.10, 0, LOW), ("l1", 0.35, 1, LOW), ("l2", 0.60, 0, LOW), ("l3", 0.85, 1, LOW),
                ("h0", 0.20, 1, HIGH), ("h1", 0.45, 0, HIGH), ("h2", 0.70, 1, HIGH), ("h3", 0.95, 0, HIGH),
            ],
            "ehr-low",
        ),
        HIGH: _scored(
            [
                ("l0", 0.30, 0, LOW), ("l1", 0.30, 1, LOW), ("l2", 0.15, 0, LOW), ("l3", 0.90, 1, LOW),
                ("h0", 0.55, 1, HIGH), ("h1", 0.25, 0, HIGH), ("h2", 0.80, 1, HIGH), ("h3", 0.05, 0, HIGH),
            ],
            "ehr-high",
        ),
    }
    m = generalization_matrix(by_train, FeatureKind.EHR_LIKE)
    for tp, s in by_train.items():
        for qp in (LOW, HIGH):
            cell = [(e[1], e[2]) for e in s.entries if e[3] is qp]
            expected = brute_auc([c[0] for c in cell], [c[1] for c in cell])
            assert m[tp, qp] == pytest.approx(expected, abs=1e-12)
    # hand count for one cell: low-trained model on LOW: pos {0.35, 0.85} vs neg {0.10, 0.60} -> 3 of 4
    assert m[LOW, LOW] == 0.75


def test_matrix_single_class_cell_names_the_cell():
    s = _scored([("a", 0.2, 0, LOW), ("b", 0.3, 0, LOW), ("c", 0.4, 0, HIGH), ("d", 0.3, 1, HIGH)])
    with pytest.raises(DegenerateLabels, match="low"):
        generalization_matrix({LOW: s, HIGH: s}, FeatureKind.EKG_LIKE)


def test_matrix_requires_intervals_to_cover():
    cells = {(a, b): 0.7 for a in (LOW, HIGH) for b in (LOW, HIGH)}
    GeneralizationMatrix(FeatureKind.EKG_LIKE, cells, {k: (0.6, 0.8) for k in cells})
    with pytest.raises(ValidationError):
        GeneralizationMatrix(FeatureKind.EKG_LIKE, cells, {k: (0.75, 0.8) for k in cells})
    with pytest.raises(ValidationError):
        GeneralizationMatrix(FeatureKind.EKG_LIKE, {(LOW, LOW): 0.5})
