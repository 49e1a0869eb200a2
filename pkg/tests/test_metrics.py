import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import make_log, random_event_log, random_store
from embcycle import metrics as M
from embcycle.types import CheckpointGrid, ConfigError, EmbeddingSnapshot, SnapshotStore

vec = arrays(np.float64, 5, elements=st.floats(-10, 10)).filter(lambda v: np.linalg.norm(v) > 1e-3)


def series(vectors, views=None):
    views = views or list(range(len(vectors)))
    return [EmbeddingSnapshot(0, v, np.asarray(x, dtype=float), k) for k, (v, x) in enumerate(zip(views, vectors))]


def test_cosine_distance_examples():
    x = np.array([0.3, -1.2, 2.0])
    assert M.cosine_distance(x, x) == pytest.approx(0.0, abs=1e-15)
    assert M.cosine_distance([1, 0], [0, 1]) == 1.0
    assert M.cosine_distance(x, -x) == pytest.approx(2.0)
    with pytest.raises(M.UndefinedMetricError):
        M.cosine_distance([0, 0], [1, 0])
    with pytest.raises(ValueError):
        M.cosine_distance([1, 0], [1, 0, 0])


@given(vec, vec, st.floats(0.01, 100), st.floats(0.01, 100))
def test_cosine_distance_symmetric_scale_invariant_bounded(x, y, a, b):
    d = M.cosine_distance(x, y)
    assert 0.0 <= d <= 2.0
    assert d == M.cosine_distance(y, x)
    assert M.cosine_distance(a * x, b * y) == pytest.approx(d, abs=1e-9)


def test_maturity_curve_examples():
    e = np.array([1.0, 2.0])
    assert [d for _, d in M.maturity_curve(series([e, e, e])).points] == [0.0, 0.0, 0.0]
    assert [d for _, d in M.maturity_curve(series([e, -e])).points] == [pytest.approx(2.0, abs=1e-15), 0.0]
    with pytest.raises(ValueError):
        M.maturity_curve(series([e]))


def test_maturity_curve_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        vecs = rng.normal(size=(5, 4))
        curve = M.maturity_curve(series(vecs))
        assert [d for _, d in curve.points] == pytest.approx(oracles.maturity(vecs.tolist()), abs=1e-12)
        assert curve.points[-1][1] == 0.0


def test_maturity_curves_count_skipped_items():
    rng = np.random.default_rng(1)
    store = random_store(rng)
    curves, skipped = M.maturity_curves(store)
    assert len(curves) + skipped == len(store.items())
    assert skipped == sum(len(store.series(i)) < 2 for i in store.items())


def test_maturity_crossing_rules():
    curve = M.MaturityCurve(0, ((1000, 0.9), (2000, 0.6), (5000, 0.4), (10000, 0.3)))
    assert M.maturity_crossing(curve, 0.5) == 5000
    assert M.maturity_crossing(M.MaturityCurve(0, ((0, 0.0), (10, 0.0))), 0.5) == 0
    # a dip below alpha that does not last is not a crossing
    bouncy = M.MaturityCurve(0, ((0, 0.9), (10, 0.2), (20, 0.7), (30, 0.1), (40, 0.0)))
    assert M.maturity_crossing(bouncy, 0.5) == 30
    assert M.maturity_crossing(M.MaturityCurve(0, ((0, 0.9), (1, 0.8))), 0.5) is None
    with pytest.raises(ConfigError):
        M.maturity_crossing(curve, 2.0)


def test_learning_curve_examples():
    grid = CheckpointGrid((0, 100))
    store = SnapshotStore(grid)
    store.add(EmbeddingSnapshot(1, 0, np.array([1.0, 0.0]), 0))
    store.add(EmbeddingSnapshot(1, 100, np.array([0.0, 1.0]), 1))
    assert M.learning_curve(store).points == ((100, 0.01, 1),)
    flat = SnapshotStore(CheckpointGrid((0, 5, 10)))
    for item in range(3):
        for v in (0, 5, 10):
            flat.add(EmbeddingSnapshot(item, v, np.array([1.0, 2.0]), v))
    assert M.learning_curve(flat).values == [0.0, 0.0]


@pytest.mark.parametrize("average", [True, False])
def test_learning_curve_matches_oracle(average):
    rng = np.random.default_rng(2)
    for _ in range(25):
        store = random_store(rng)
        got = M.learning_curve(store, average=average).points
        ref = oracles.learning({i: [s.vector.tolist() for s in store.series(i)] for i in store.items()},
                               store.grid.views, average)
        assert [(v, n) for v, _, n in got] == [(v, n) for v, _, n in ref]
        for (_, a, _), (_, b, _) in zip(got, ref):
            assert abs(a - b) <= 1e-12


def test_peak_and_saturation_examples():
    curve = M.LearningCurve(tuple((v, val, 1) for v, val in zip((1, 2, 3, 4, 5), (0.1, 0.4, 0.2, 0.02, 0.01))))
    assert M.peak_and_saturation(curve, 0.1) == (2, 4)
    falling = M.LearningCurve(((1, 0.5, 1), (2, 0.3, 1), (3, 0.01, 1)))
    assert M.peak_and_saturation(falling, 0.1) == (1, 3)
    ties = M.LearningCurve(((1, 0.5, 1), (2, 0.5, 1), (3, 0.5, 1)))
    assert M.peak_and_saturation(ties, 0.1) == (1, None)
    with pytest.raises(ValueError):
        M.peak_and_saturation(M.LearningCurve(()), 0.1)
    with pytest.raises(ConfigError):
        M.peak_and_saturation(curve, 1.0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.floats(0.01, 0.99))
def test_peak_and_saturation_against_scan(values, frac):
    curve = M.LearningCurve(tuple((10 * (k + 1), v, 1) for k, v in enumerate(values)))
    peak, sat = M.peak_and_saturation(curve, frac)
    p = values.index(max(values))
    assert peak == 10 * (p + 1)
    expected = None
    for k in range(p + 1, len(values)):
        if all(v <= frac * values[p] for v in values[k:]):
            expected = 10 * (k + 1)
            break
    assert sat == expected


def test_norm_ratio_examples_and_errors():
    e = np.array([3.0, 4.0])
    assert M.norm_ratio(series([e], [0]), 0) == 1.0
    assert M.norm_ratio(series([e, 2 * e], [0, 10]), 10) == 2.0
    with pytest.raises(KeyError):
        M.norm_ratio(series([e], [0]), 10)
    with pytest.raises(M.UndefinedMetricError):
        M.norm_ratio(series([np.zeros(2), e], [0, 10]), 10)


def test_norm_ratios_match_oracle_and_histogram_conserves():
    rng = np.random.default_rng(3)
    for _ in range(20):
        store = random_store(rng)
        x = store.grid.final
        ratios, excluded = M.norm_ratios(store, x)
        for item in store.items():
            s = store.series(item)
            if len(s) == len(store.grid):
                assert ratios[item] == pytest.approx(oracles.norm(s[-1].vector) / oracles.norm(s[0].vector), abs=1e-12)
            else:
                assert item not in ratios
        assert excluded == len(store.items()) - len(ratios)
        hist = M.norm_ratio_histogram(store, x, 7)
        assert hist.total == len(ratios) and hist.excluded == excluded


def test_histogram_of_equal_ratios_occupies_one_bin():
    grid = CheckpointGrid((0, 10))
    store = SnapshotStore(grid)
    for item in range(4):
        store.add(EmbeddingSnapshot(item, 0, np.ones(2), 0))
        store.add(EmbeddingSnapshot(item, 10, np.ones(2), 1))
    hist = M.norm_ratio_histogram(store, 10, 5)
    assert sorted(hist.counts) == [0, 0, 0, 0, 4] and hist.mean == 1.0
    with pytest.raises(ConfigError):
        M.norm_ratio_histogram(store, 10, [1.0, 1.0])


def test_bucket_spec_validation_and_labels():
    spec = M.ViewBucketSpec()
    assert spec.edges == (0, 1000, 2000, 5000, 10000)
    assert spec.labels()[-1] == "[10000,inf)"
    assert spec.index([0, 999, 1000, 10000, 50000]).tolist() == [0, 0, 1, 4, 4]
    for bad in ((1, 2), (0, 5, 5), ()):
        with pytest.raises(ConfigError):
            M.ViewBucketSpec(bad)


def test_popularity_share_examples():
    log = make_log([1, 2, 3, 4])
    assert M.popularity_share(log, M.ViewBucketSpec((0, 10))) == [1.0, 0.0]
    with pytest.raises(ValueError):
        M.popularity_share(make_log([]), M.ViewBucketSpec())


def test_popularity_and_engagement_match_oracles():
    rng = np.random.default_rng(4)
    for _ in range(25):
        log = random_event_log(rng)
        edges = (0,) + tuple(sorted(set(int(e) for e in rng.integers(1, 60, size=3))))
        spec = M.ViewBucketSpec(edges)
        views = log.views_at_imp.tolist()
        shares = M.popularity_share(log, spec)
        assert shares == pytest.approx(oracles.popularity(views, edges), abs=1e-12)
        assert abs(sum(shares) - 1.0) <= 1e-12
        eng = M.engagement_by_bucket(log, spec)
        ref = oracles.engagement(views, log.signal_column("click").tolist(), log.signal_column("view").tolist(), edges)
        for got, exp in zip(eng, ref):
            if exp is None:
                assert got is None
            else:
                assert abs(got["click_rate"] - exp[0]) <= 1e-12 and abs(got["svp_rate"] - exp[1]) <= 1e-12
                assert 0.0 <= got["click_rate"] <= 1.0 and 0.0 <= got["svp_rate"] <= 1.0


def test_popularity_invariant_under_reordering():
    rng = np.random.default_rng(5)
    log = random_event_log(rng)
    spec = M.ViewBucketSpec((0, 3, 10))
    perm = rng.permutation(len(log))
    shuffled = type(log)(log.seq, log.user[perm], log.item[perm], log.views_at_imp[perm], log.outcomes[perm], log.t)
    assert M.popularity_share(shuffled, spec) == M.popularity_share(log, spec)


def test_engagement_all_ones_and_empty_buckets():
    log = make_log([1, 1, 1], views=[1, 1, 1])
    log.outcomes[:, 2] = 1
    eng = M.engagement_by_bucket(log, M.ViewBucketSpec((0, 100)))
    assert eng[0] == {"impressions": 3, "click_rate": 1.0, "svp_rate": 1.0}
    assert eng[1] is None


def test_play_counts():
    log = make_log([1, 2, 1], views=[1, 0, 1])
    assert M.play_counts(log) == {1: 2, 2: 0}


def test_metrics_are_pure():
    rng = np.random.default_rng(6)
    store = random_store(rng)
    a = M.learning_curve(store)
    b = M.learning_curve(store)
    assert a == b and math.isfinite(sum(a.values))
