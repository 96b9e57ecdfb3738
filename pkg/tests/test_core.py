import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portastat.core import (
    HIGH,
    LOW,
    Cohort,
    FeatureKind,
    PopulationTag,
    Record,
    RngHandle,
    ScoredSet,
    SplitTag,
    ValidationError,
    cohort_from_csv,
    cohort_to_csv,
    partition_by,
    scored_from_csv,
    scored_to_csv,
    validate_cohort,
)


def make_set(entries, model_id="m"):
    return ScoredSet.from_entries(model_id, entries)


entry_lists = st.lists(
    st.tuples(
        st.floats(0.0, 1.0, allow_nan=False),
        st.integers(0, 1),
        st.sampled_from(list(PopulationTag)),
    ),
    max_size=40,
).map(lambda rows: [(f"r{i}", s, y, p) for i, (s, y, p) in enumerate(rows)])


def test_tags_round_trip_text():
    for tag in PopulationTag:
        assert PopulationTag.parse(tag.value) is tag
        assert PopulationTag.from_code(tag.code) is tag
    assert [s.value for s in SplitTag] == ["train", "val", "test"]
    with pytest.raises(ValidationError):
        PopulationTag.parse("medium")


def test_rng_streams_are_reproducible_and_distinct():
    a = RngHandle(7, "x").generator().random(5)
    b = RngHandle(7, "x").generator().random(5)
    c = RngHandle(7, "y").generator().random(5)
    d = RngHandle(8, "x").generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert RngHandle(7, "a").child("b") == RngHandle(7, "a/b")


def test_partition_by_population():
    s = make_set([("a", 0.1, 0, LOW), ("b", 0.2, 1, HIGH), ("c", 0.3, 0, LOW), ("d", 0.4, 1, HIGH)])
    low = partition_by(s, LOW)
    assert low.ids == ("a", "c")


def test_partition_by_label_without_positives_is_empty():
    s = make_set([("a", 0.1, 0, LOW), ("b", 0.2, 0, HIGH)])
    assert len(partition_by(s, LOW, label=1)) == 0


def test_partition_by_high_positives_by_hand():
    rows = []
    for pop in (LOW, HIGH):
        for k, y in enumerate((0, 1, 1)):
            rows.append((f"{pop.value}{k}", 0.1 * (k + 1), y, pop))
    got = partition_by(make_set(rows), HIGH, label=1)
    assert got.ids == ("high1", "high2")


@given(entry_lists, st.sampled_from(list(PopulationTag)), st.sampled_from([None, 0, 1]))
def test_partition_by_is_idempotent(entries, pop, label):
    s = make_set(entries)
    once = partition_by(s, pop, label)
    assert partition_by(once, pop, label) == once


@given(entry_lists)
def test_population_partitions_are_disjoint_and_cover(entries):
    s = make_set(entries)
    low, high = set(partition_by(s, LOW).ids), set(partition_by(s, HIGH).ids)
    assert not low & high
    assert low | high == set(s.ids)


def _cohort(n=10, dim=3):
    rng = np.random.default_rng(0)
    records = [
        Record(f"p{i}", rng.normal(size=dim), i % 2, LOW if i < n // 2 else HIGH, SplitTag.TRAIN) for i in range(n)
    ]
    return Cohort(dim, FeatureKind.EKG_LIKE, tuple(records))


def test_validate_cohort_clean():
    assert validate_cohort(_cohort()) == []


def test_validate_cohort_wrong_length():
    c = _cohort()
    bad = Record("p3", np.zeros(2), 1, LOW, SplitTag.TRAIN)
    records = list(c.records)
    records[3] = bad
    problems = validate_cohort(Cohort(3, c.feature_kind, tuple(records)))
    assert len(problems) == 1
    assert "'p3'" in problems[0]


def test_validate_cohort_duplicate_and_non_finite():
    c = _cohort()
    records = list(c.records)
    records[1] = Record("p0", records[1].features, 1, LOW, SplitTag.TRAIN)
    records[5] = Record("p5", np.array([0.0, np.inf, 1.0]), 1, HIGH, SplitTag.TRAIN)
    problems = validate_cohort(Cohort(3, c.feature_kind, tuple(records)))
    assert len(problems) == 2
    assert any("duplicate" in p and "'p0'" in p for p in problems)
    assert any("non-finite" in p and "'p5'" in p for p in problems)
    with pytest.raises(ValidationError):
        Cohort(3, c.feature_kind, tuple(records)).check()


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 5).flatmap(
        lambda d: st.lists(
            st.tuples(
                st.lists(st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False), min_size=d, max_size=d),
                st.integers(0, 1),
                st.sampled_from(list(PopulationTag)),
                st.sampled_from(list(SplitTag)),
            ),
            max_size=12,
        ).map(lambda rows: (d, rows))
    )
)
def test_cohort_csv_round_trip(drawn):
    dim, rows = drawn
    records = tuple(Record(f"id{i}", np.array(f), y, p, s) for i, (f, y, p, s) in enumerate(rows))
    cohort = Cohort(dim, FeatureKind.EHR_LIKE, records)
    back = cohort_from_csv(cohort_to_csv(cohort), FeatureKind.EHR_LIKE)
    assert back == cohort


def test_cohort_csv_reports_line_number():
    text = "id,population,split,label,f0\na,low,train,0,1.0\nb,low,train,0,abc\n"
    with pytest.raises(ValidationError, match=":3"):
        cohort_from_csv(text, FeatureKind.EKG_LIKE, "c.csv")


@given(entry_lists)
def test_scored_csv_round_trip(entries):
    s = make_set(entries)
    assert scored_from_csv(scored_to_csv(s), "m") == s


def test_scored_set_rejects_bad_entries():
    with pytest.raises(ValidationError, match="'x'"):
        make_set([("x", 1.2, 0, LOW)])
    with pytest.raises(ValidationError, match="duplicate"):
        make_set([("x", 0.2, 0, LOW), ("x", 0.3, 1, HIGH)])
    with pytest.raises(ValidationError, match="line|:2"):
        scored_from_csv("id,population,label,score\nx,low,0,1.2\n", "m", "s.csv")


def test_resample_may_repeat_ids():
    s = make_set([("a", 0.1, 0, LOW), ("b", 0.9, 1, HIGH)])
    r = s.resample(np.array([1, 1, 0]))
    assert r.ids == ("b", "b", "a")
    assert r.scores.tolist() == [0.9, 0.9, 0.1]
